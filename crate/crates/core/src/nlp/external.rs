//! Process-boundary adapter for external NLP solvers.
//!
//! The parent spawns the solver command and talks to it over stdin/stdout
//! using one JSON object per line:
//!
//! 1. parent → child: a [`ProblemHeader`] (`"type": "problem"`) with the
//!    dimensions, bounds (`null` = unbounded), start point and options;
//! 2. child → parent: any number of evaluation [`Request`]s, each answered
//!    by exactly one [`Response`] line;
//! 3. child → parent: a final `"type": "solution"` (or `"type": "error"`).
//!
//! [`serve`] implements the child side on top of any [`NlpSolver`], which
//! lets the built-in solver run out of process.

use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    Multipliers, NlpProblem, NlpSolver, SolveOptions, SolveResult, SolverError, StartPoint,
    Triplets,
};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemHeader {
    pub n: usize,
    pub m_eq: usize,
    pub m_ineq: usize,
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
    pub x0: Vec<f64>,
    pub multipliers: Option<Multipliers>,
    pub mu: Option<f64>,
    pub options: SolveOptions,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Objective { x: Vec<f64> },
    Gradient { x: Vec<f64> },
    Equalities { x: Vec<f64> },
    Inequalities { x: Vec<f64> },
    EqualityJacobian { x: Vec<f64> },
    InequalityJacobian { x: Vec<f64> },
    Hessian {
        x: Vec<f64>,
        obj_factor: f64,
        lambda_eq: Vec<f64>,
        lambda_ineq: Vec<f64>,
    },
    Solution { result: SolveResult },
    Error { message: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    Value { value: f64 },
    Vector { values: Vec<f64> },
    Triplets { triplets: Option<Triplets> },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename = "problem")]
struct TaggedHeader {
    #[serde(flatten)]
    header: ProblemHeader,
}

fn to_wire(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn json_err(e: serde_json::Error) -> SolverError {
    SolverError::External(format!("malformed message: {e}"))
}

/// Replace non-finite numbers, which JSON cannot carry, by signed `f64::MAX`.
fn sanitize(mut r: SolveResult) -> SolveResult {
    let fix = |v: &mut f64| {
        if !v.is_finite() {
            *v = if v.is_sign_negative() { -f64::MAX } else { f64::MAX };
        }
    };
    r.x.iter_mut().for_each(fix);
    fix(&mut r.objective);
    fix(&mut r.kkt.stationarity);
    fix(&mut r.kkt.feasibility);
    fix(&mut r.kkt.complementarity);
    fix(&mut r.final_mu);
    r
}

/// Parent side: runs a solver command and serves its evaluation requests.
#[derive(Clone, Debug)]
pub struct ExternalSolver {
    program: String,
    args: Vec<String>,
}

impl ExternalSolver {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        ExternalSolver {
            program: program.into(),
            args,
        }
    }

    /// Split a whitespace-separated command line.
    pub fn from_command_line(cmd: &str) -> Option<Self> {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        Some(ExternalSolver::new(program, parts.collect()))
    }
}

fn answer(problem: &dyn NlpProblem, req: Request) -> Result<Response, Request> {
    let n = problem.num_variables();
    Ok(match req {
        Request::Objective { x } => Response::Value {
            value: problem.objective(&x),
        },
        Request::Gradient { x } => {
            let mut g = vec![0.0; n];
            problem.gradient(&x, &mut g);
            Response::Vector { values: g }
        }
        Request::Equalities { x } => {
            let mut c = vec![0.0; problem.num_equalities()];
            problem.equalities(&x, &mut c);
            Response::Vector { values: c }
        }
        Request::Inequalities { x } => {
            let mut c = vec![0.0; problem.num_inequalities()];
            problem.inequalities(&x, &mut c);
            Response::Vector { values: c }
        }
        Request::EqualityJacobian { x } => Response::Triplets {
            triplets: Some(problem.equality_jacobian(&x)),
        },
        Request::InequalityJacobian { x } => Response::Triplets {
            triplets: Some(problem.inequality_jacobian(&x)),
        },
        Request::Hessian {
            x,
            obj_factor,
            lambda_eq,
            lambda_ineq,
        } => Response::Triplets {
            triplets: problem.hessian(&x, obj_factor, &lambda_eq, &lambda_ineq),
        },
        other => return Err(other),
    })
}

impl NlpSolver for ExternalSolver {
    fn solve(
        &self,
        problem: &dyn NlpProblem,
        start: &StartPoint,
        opts: &SolveOptions,
    ) -> Result<SolveResult, SolverError> {
        let (lower, upper) = problem.bounds();
        let header = TaggedHeader {
            header: ProblemHeader {
                n: problem.num_variables(),
                m_eq: problem.num_equalities(),
                m_ineq: problem.num_inequalities(),
                lower: lower.into_iter().map(to_wire).collect(),
                upper: upper.into_iter().map(to_wire).collect(),
                x0: start.x.clone(),
                multipliers: start.multipliers.clone(),
                mu: start.mu,
                options: opts.clone(),
            },
        };

        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = BufReader::new(child.stdout.take().expect("piped stdout"));

        writeln!(stdin, "{}", serde_json::to_string(&header).map_err(json_err)?)?;
        stdin.flush()?;

        let mut line = String::new();
        let outcome = loop {
            line.clear();
            if stdout.read_line(&mut line)? == 0 {
                break Err(SolverError::External("solver exited without a solution".into()));
            }
            let req: Request = serde_json::from_str(line.trim()).map_err(json_err)?;
            match answer(problem, req) {
                Ok(resp) => {
                    writeln!(stdin, "{}", serde_json::to_string(&resp).map_err(json_err)?)?;
                    stdin.flush()?;
                }
                Err(Request::Solution { result }) => break Ok(result),
                Err(Request::Error { message }) => break Err(SolverError::External(message)),
                Err(_) => unreachable!("answer handles every evaluation request"),
            }
        };
        drop(stdin);
        let status = child.wait()?;
        match outcome {
            Ok(r) if r.x.len() == problem.num_variables() => Ok(r),
            Ok(_) => Err(SolverError::External("solution has wrong dimension".into())),
            Err(e) if !status.success() => Err(SolverError::External(format!(
                "{e} (exit status {status})"
            ))),
            Err(e) => Err(e),
        }
    }

    fn name(&self) -> &str {
        &self.program
    }
}

/// A problem whose evaluations are forwarded to the parent process.
struct RemoteProblem<R, W> {
    header: ProblemHeader,
    io: Mutex<(R, W)>,
}

impl<R: BufRead + Send, W: Write + Send> RemoteProblem<R, W> {
    fn call(&self, req: &Request) -> Response {
        let mut guard = self.io.lock().expect("remote channel poisoned");
        let (reader, writer) = &mut *guard;
        let msg = serde_json::to_string(req).expect("requests serialize");
        writeln!(writer, "{msg}").expect("write to parent");
        writer.flush().expect("flush to parent");
        let mut line = String::new();
        reader.read_line(&mut line).expect("read from parent");
        serde_json::from_str(line.trim()).expect("parent sent a malformed response")
    }

    fn vector(&self, req: Request, out: &mut [f64]) {
        match self.call(&req) {
            Response::Vector { values } => out.copy_from_slice(&values),
            other => panic!("expected a vector, got {other:?}"),
        }
    }

    fn triplets(&self, req: Request) -> Option<Triplets> {
        match self.call(&req) {
            Response::Triplets { triplets } => triplets,
            other => panic!("expected triplets, got {other:?}"),
        }
    }
}

impl<R: BufRead + Send, W: Write + Send> NlpProblem for RemoteProblem<R, W> {
    fn num_variables(&self) -> usize {
        self.header.n
    }
    fn num_equalities(&self) -> usize {
        self.header.m_eq
    }
    fn num_inequalities(&self) -> usize {
        self.header.m_ineq
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.header
                .lower
                .iter()
                .map(|v| v.unwrap_or(f64::NEG_INFINITY))
                .collect(),
            self.header
                .upper
                .iter()
                .map(|v| v.unwrap_or(f64::INFINITY))
                .collect(),
        )
    }
    fn objective(&self, x: &[f64]) -> f64 {
        match self.call(&Request::Objective { x: x.to_vec() }) {
            Response::Value { value } => value,
            other => panic!("expected a value, got {other:?}"),
        }
    }
    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        self.vector(Request::Gradient { x: x.to_vec() }, grad)
    }
    fn equalities(&self, x: &[f64], out: &mut [f64]) {
        self.vector(Request::Equalities { x: x.to_vec() }, out)
    }
    fn inequalities(&self, x: &[f64], out: &mut [f64]) {
        self.vector(Request::Inequalities { x: x.to_vec() }, out)
    }
    fn equality_jacobian(&self, x: &[f64]) -> Triplets {
        self.triplets(Request::EqualityJacobian { x: x.to_vec() })
            .unwrap_or_default()
    }
    fn inequality_jacobian(&self, x: &[f64]) -> Triplets {
        self.triplets(Request::InequalityJacobian { x: x.to_vec() })
            .unwrap_or_default()
    }
    fn hessian(
        &self,
        x: &[f64],
        obj_factor: f64,
        lambda_eq: &[f64],
        lambda_ineq: &[f64],
    ) -> Option<Triplets> {
        self.triplets(Request::Hessian {
            x: x.to_vec(),
            obj_factor,
            lambda_eq: lambda_eq.to_vec(),
            lambda_ineq: lambda_ineq.to_vec(),
        })
    }
}

/// Child side: read one problem from `input`, solve it with `solver` while
/// forwarding evaluations to the parent, and write the solution to `output`.
pub fn serve<R, W>(mut input: R, mut output: W, solver: &dyn NlpSolver) -> Result<(), SolverError>
where
    R: BufRead + Send,
    W: Write + Send,
{
    let mut line = String::new();
    input.read_line(&mut line)?;
    let TaggedHeader { header } = serde_json::from_str(line.trim()).map_err(json_err)?;
    let start = StartPoint {
        x: header.x0.clone(),
        multipliers: header.multipliers.clone(),
        mu: header.mu,
    };
    let opts = header.options.clone();
    let remote = RemoteProblem {
        header,
        io: Mutex::new((input, output)),
    };
    let outcome = solver.solve(&remote, &start, &opts);
    let (_, w) = remote.io.into_inner().expect("remote channel poisoned");
    output = w;
    let msg = match outcome {
        Ok(result) => Request::Solution {
            result: sanitize(result),
        },
        Err(e) => Request::Error {
            message: e.to_string(),
        },
    };
    writeln!(output, "{}", serde_json::to_string(&msg).map_err(json_err)?)?;
    output.flush()?;
    Ok(())
}
