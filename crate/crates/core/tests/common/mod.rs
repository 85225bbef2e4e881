#![allow(dead_code)]

use std::path::PathBuf;

use radial_opf::matpower::load_case;
use radial_opf::network::Network;

pub fn case_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../cases")
        .join(format!("{name}.m"))
}

pub fn case(name: &str) -> Network {
    load_case(case_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// MATPOWER text for a synthetic case: a path through all buses plus the
/// extra branches, one generator at bus 1, loads `(pd, qd)` in MW/MVAr.
pub fn synthetic_case(loads: &[(f64, f64)], extra: &[(usize, usize)], base: f64) -> String {
    let n = loads.len();
    let mut s = format!("function mpc = synth\nmpc.version = '2';\nmpc.baseMVA = {base};\nmpc.bus = [\n");
    for (i, (pd, qd)) in loads.iter().enumerate() {
        let ty = if i == 0 { 3 } else { 1 };
        s += &format!("\t{}\t{ty}\t{pd}\t{qd}\t0\t0\t1\t1\t0\t345\t1\t1.1\t0.9;\n", i + 1);
    }
    s += "];\nmpc.gen = [\n\t1\t0\t0\t300\t-300\t1\t100\t1\t500\t0;\n];\nmpc.branch = [\n";
    let edges = (1..n).map(|i| (i, i + 1)).chain(extra.iter().copied());
    for (f, t) in edges {
        s += &format!("\t{f}\t{t}\t0.01\t0.1\t0.02\t250\t250\t250\t0\t0\t1\t-360\t360;\n");
    }
    s += "];\nmpc.gencost = [\n\t2\t0\t0\t3\t0.01\t20\t0;\n];\n";
    s
}
