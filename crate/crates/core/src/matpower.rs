//! Reader for MATPOWER case files (`mpc.bus = [...];` matrix blocks).

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;

use crate::network::{Bus, Generator, Line, Network, NetworkError};

#[derive(Debug, thiserror::Error)]
pub enum CaseError {
    #[error("missing table `{0}`")]
    MissingTable(String),
    #[error("malformed row at line {0}")]
    MalformedRow(usize),
    #[error("unsupported generator cost model {0} (only polynomial model 2 up to quadratic is accepted)")]
    UnsupportedCostModel(u32),
    #[error("{costs} gencost rows for {gens} generators")]
    GencostCount { gens: usize, costs: usize },
    #[error("bus {0} is not defined in the bus table")]
    UnknownBus(usize),
    #[error("bus {0} is defined twice")]
    DuplicateBus(usize),
    #[error("base MVA must be positive, got {0}")]
    BadBaseMva(f64),
    #[error("branch {from}-{to} has zero series impedance")]
    ZeroImpedance { from: usize, to: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BusRow {
    pub id: usize,
    pub bus_type: u8,
    pub pd: f64,
    pub qd: f64,
    pub gs: f64,
    pub bs: f64,
    pub vm: f64,
    pub va: f64,
    pub vmax: f64,
    pub vmin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenRow {
    pub bus: usize,
    pub pg: f64,
    pub qg: f64,
    pub qmax: f64,
    pub qmin: f64,
    pub status: u8,
    pub pmax: f64,
    pub pmin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchRow {
    pub fbus: usize,
    pub tbus: usize,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    pub rate_a: f64,
    pub ratio: f64,
    pub angle: f64,
    pub status: u8,
    pub angmin: f64,
    pub angmax: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GencostRow {
    pub model: u32,
    pub startup: f64,
    pub shutdown: f64,
    pub n: usize,
    /// Highest degree first.
    pub coeffs: Vec<f64>,
}

/// A case exactly as written in the file, in MATPOWER units.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCase {
    pub base_mva: f64,
    pub bus_rows: Vec<BusRow>,
    pub gen_rows: Vec<GenRow>,
    pub branch_rows: Vec<BranchRow>,
    /// One row per generator; reactive cost rows are dropped.
    pub gencost_rows: Vec<GencostRow>,
}

type Table = Vec<(usize, Vec<f64>)>;

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '\'' => quoted = !quoted,
            '%' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

/// `mpc.<name> = <rest>` → `(name, rest)`.
fn assignment(line: &str) -> Option<(&str, &str)> {
    let rest = line.trim_start().strip_prefix("mpc.")?;
    let end = rest
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .unwrap_or(rest.len());
    let (name, after) = rest.split_at(end);
    let value = after.trim_start().strip_prefix('=')?;
    Some((name, value.trim_start()))
}

fn parse_row(text: &str, line_no: usize) -> Result<Option<Vec<f64>>, CaseError> {
    let values: Result<Vec<f64>, _> = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(str::parse::<f64>)
        .collect();
    match values {
        Ok(v) if v.is_empty() => Ok(None),
        Ok(v) => Ok(Some(v)),
        Err(_) => Err(CaseError::MalformedRow(line_no)),
    }
}

fn extract_tables(text: &str) -> Result<(Option<f64>, HashMap<String, Table>), CaseError> {
    let mut base = None;
    let mut tables = HashMap::new();
    let mut open: Option<(String, Table)> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let mut rest = strip_comment(raw);
        if open.is_none() {
            let Some((name, value)) = assignment(rest) else {
                continue;
            };
            if let Some(body) = value.strip_prefix('[') {
                open = Some((name.to_string(), Vec::new()));
                rest = body;
            } else {
                if name == "baseMVA" {
                    let v = value.trim_end().trim_end_matches(';').trim();
                    base = Some(v.parse().map_err(|_| CaseError::MalformedRow(line_no))?);
                }
                continue;
            }
        }
        let (body, closed) = match rest.find(']') {
            Some(p) => (&rest[..p], true),
            None => (rest, false),
        };
        let (_, rows) = open.as_mut().expect("a table is open");
        for segment in body.split(';') {
            if let Some(row) = parse_row(segment, line_no)? {
                rows.push((line_no, row));
            }
        }
        if closed {
            let (name, rows) = open.take().expect("a table is open");
            tables.insert(name, rows);
        }
    }
    if let Some((_, rows)) = open {
        let line_no = rows.last().map_or(text.lines().count(), |r| r.0);
        return Err(CaseError::MalformedRow(line_no));
    }
    Ok((base, tables))
}

fn take_table(tables: &mut HashMap<String, Table>, name: &str) -> Result<Table, CaseError> {
    tables
        .remove(name)
        .ok_or_else(|| CaseError::MissingTable(name.to_string()))
}

fn check_width(row: &(usize, Vec<f64>), min: usize) -> Result<(), CaseError> {
    if row.1.len() < min {
        Err(CaseError::MalformedRow(row.0))
    } else {
        Ok(())
    }
}

fn as_index(v: f64, line_no: usize) -> Result<usize, CaseError> {
    if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
        Ok(v as usize)
    } else {
        Err(CaseError::MalformedRow(line_no))
    }
}

fn as_flag(v: f64, line_no: usize) -> Result<u8, CaseError> {
    let i = as_index(v, line_no)?;
    u8::try_from(i).map_err(|_| CaseError::MalformedRow(line_no))
}

pub fn parse_case(text: &str) -> Result<RawCase, CaseError> {
    let (base, mut tables) = extract_tables(text)?;
    let base_mva = base.ok_or_else(|| CaseError::MissingTable("baseMVA".into()))?;

    let bus_rows = take_table(&mut tables, "bus")?
        .iter()
        .map(|row| {
            check_width(row, 13)?;
            let (ln, v) = (row.0, &row.1);
            Ok(BusRow {
                id: as_index(v[0], ln)?,
                bus_type: as_flag(v[1], ln)?,
                pd: v[2],
                qd: v[3],
                gs: v[4],
                bs: v[5],
                vm: v[7],
                va: v[8],
                vmax: v[11],
                vmin: v[12],
            })
        })
        .collect::<Result<Vec<_>, CaseError>>()?;

    let gen_rows = take_table(&mut tables, "gen")?
        .iter()
        .map(|row| {
            check_width(row, 10)?;
            let (ln, v) = (row.0, &row.1);
            Ok(GenRow {
                bus: as_index(v[0], ln)?,
                pg: v[1],
                qg: v[2],
                qmax: v[3],
                qmin: v[4],
                status: u8::from(v[7] > 0.0),
                pmax: v[8],
                pmin: v[9],
            })
        })
        .collect::<Result<Vec<_>, CaseError>>()?;

    let branch_rows = take_table(&mut tables, "branch")?
        .iter()
        .map(|row| {
            check_width(row, 11)?;
            let (ln, v) = (row.0, &row.1);
            Ok(BranchRow {
                fbus: as_index(v[0], ln)?,
                tbus: as_index(v[1], ln)?,
                r: v[2],
                x: v[3],
                b: v[4],
                rate_a: v[5],
                ratio: v[8],
                angle: v[9],
                status: u8::from(v[10] > 0.0),
                angmin: v.get(11).copied().unwrap_or(-360.0),
                angmax: v.get(12).copied().unwrap_or(360.0),
            })
        })
        .collect::<Result<Vec<_>, CaseError>>()?;

    let cost_table = take_table(&mut tables, "gencost")?;
    let ng = gen_rows.len();
    if cost_table.len() != ng && cost_table.len() != 2 * ng {
        return Err(CaseError::GencostCount {
            gens: ng,
            costs: cost_table.len(),
        });
    }
    let gencost_rows = cost_table[..ng]
        .iter()
        .map(|row| {
            check_width(row, 4)?;
            let (ln, v) = (row.0, &row.1);
            let model = as_index(v[0], ln)? as u32;
            if model != 2 {
                return Err(CaseError::UnsupportedCostModel(model));
            }
            let n = as_index(v[3], ln)?;
            if n > 3 {
                return Err(CaseError::UnsupportedCostModel(model));
            }
            check_width(row, 4 + n)?;
            Ok(GencostRow {
                model,
                startup: v[1],
                shutdown: v[2],
                n,
                coeffs: v[4..4 + n].to_vec(),
            })
        })
        .collect::<Result<Vec<_>, CaseError>>()?;

    Ok(RawCase {
        base_mva,
        bus_rows,
        gen_rows,
        branch_rows,
        gencost_rows,
    })
}

fn deg(v: f64) -> f64 {
    v * PI / 180.0
}

/// Convert to per-unit, drop out-of-service equipment, and validate.
pub fn to_network(raw: &RawCase) -> Result<Network, CaseError> {
    let base = raw.base_mva;
    if !(base > 0.0) {
        return Err(CaseError::BadBaseMva(base));
    }
    let mut sorted: Vec<&BusRow> = raw.bus_rows.iter().collect();
    sorted.sort_by_key(|b| b.id);
    let mut index_of = BTreeMap::new();
    for (k, b) in sorted.iter().enumerate() {
        if index_of.insert(b.id, k).is_some() {
            return Err(CaseError::DuplicateBus(b.id));
        }
        if b.bus_type == 4 {
            return Err(NetworkError::IslandedBus(b.id).into());
        }
    }
    let lookup = |id: usize| index_of.get(&id).copied().ok_or(CaseError::UnknownBus(id));

    let buses = sorted
        .iter()
        .enumerate()
        .map(|(k, b)| Bus {
            index: k,
            id: b.id,
            p_d: b.pd / base,
            q_d: b.qd / base,
            g_sh: b.gs / base,
            b_sh: b.bs / base,
            v_min: b.vmin,
            v_max: b.vmax,
            is_ref: b.bus_type == 3,
        })
        .collect();

    let mut lines = Vec::new();
    for br in raw.branch_rows.iter().filter(|b| b.status != 0) {
        let (from, to) = (lookup(br.fbus)?, lookup(br.tbus)?);
        let z = Complex64::new(br.r, br.x);
        if z.norm_sqr() == 0.0 {
            return Err(CaseError::ZeroImpedance {
                from: br.fbus,
                to: br.tbus,
            });
        }
        let ratio = if br.ratio == 0.0 { 1.0 } else { br.ratio };
        let tap = Complex64::from_polar(ratio, deg(br.angle));
        let s_max = (br.rate_a > 0.0).then(|| br.rate_a / base);
        let lo = if br.angmin <= -360.0 { f64::NEG_INFINITY } else { deg(br.angmin) };
        let hi = if br.angmax >= 360.0 { f64::INFINITY } else { deg(br.angmax) };
        let unbounded = (br.angmin == 0.0 && br.angmax == 0.0) || (lo.is_infinite() && hi.is_infinite());
        let angle_limits = (!unbounded).then_some((lo, hi));
        lines.push(Line::new(
            lines.len(),
            from,
            to,
            z.inv(),
            br.b,
            tap,
            s_max,
            angle_limits,
        )?);
    }

    let mut generators = Vec::new();
    for (g, cost) in raw.gen_rows.iter().zip(&raw.gencost_rows) {
        if g.status == 0 {
            continue;
        }
        let bus = lookup(g.bus)?;
        // Pad to (c2, c1, c0) and rescale so the cost is in $/h for p.u. output.
        let mut c = [0.0; 3];
        for (k, v) in cost.coeffs.iter().rev().enumerate() {
            c[2 - k] = *v;
        }
        generators.push(Generator {
            index: generators.len(),
            bus,
            p_min: g.pmin / base,
            p_max: g.pmax / base,
            q_min: g.qmin / base,
            q_max: g.qmax / base,
            c2: c[0] * base * base,
            c1: c[1] * base,
            c0: c[2],
        });
    }

    Ok(Network::new(base, buses, lines, generators)?)
}

pub fn load_case(path: impl AsRef<Path>) -> Result<Network, CaseError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    to_network(&parse_case(&text)?)
}
