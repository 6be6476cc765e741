//! Reference external model speaking the line protocol of `sdpso_core::extmodel`.
//!
//! Evaluates a built-in benchmark (spherical by default). Used by the
//! integration tests, including fault injection:
//!
//! ```text
//! sdpso-echo-model [--function NAME] [--declare-dim N] [--sleep SECS]
//!                  [--fault malformed|exit|wrong-id|hang] [--fault-after N]
//! ```

use std::io::{self, BufRead, Write};
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use sdpso_core::extmodel::{Reply, Request};
use sdpso_core::objectives::BenchmarkKind;

#[derive(Clone, Copy, PartialEq)]
enum Fault {
    Malformed,
    Exit,
    WrongId,
    Hang,
}

struct Options {
    function: BenchmarkKind,
    declare_dim: Option<usize>,
    sleep: Duration,
    fault: Option<Fault>,
    fault_after: u64,
}

fn parse_args() -> Result<Options, String> {
    let mut opts = Options {
        function: BenchmarkKind::Spherical,
        declare_dim: None,
        sleep: Duration::ZERO,
        fault: None,
        fault_after: 0,
    };
    let mut args = std::env::args().skip(1);
    while let Some(flag) = args.next() {
        let mut value = || args.next().ok_or_else(|| format!("{flag} needs a value"));
        match flag.as_str() {
            "--function" => opts.function = value()?.parse().map_err(|e| format!("{e}"))?,
            "--declare-dim" => {
                opts.declare_dim = Some(value()?.parse().map_err(|e| format!("{e}"))?)
            }
            "--sleep" => {
                let secs: f64 = value()?.parse().map_err(|e| format!("{e}"))?;
                opts.sleep = Duration::from_secs_f64(secs);
            }
            "--fault" => {
                opts.fault = Some(match value()?.as_str() {
                    "malformed" => Fault::Malformed,
                    "exit" => Fault::Exit,
                    "wrong-id" => Fault::WrongId,
                    "hang" => Fault::Hang,
                    other => return Err(format!("unknown fault `{other}`")),
                })
            }
            "--fault-after" => opts.fault_after = value()?.parse().map_err(|e| format!("{e}"))?,
            other => return Err(format!("unknown argument `{other}`")),
        }
    }
    Ok(opts)
}

fn emit(out: &mut impl Write, reply: &Reply) -> io::Result<()> {
    writeln!(out, "{}", serde_json::to_string(reply).expect("reply serializes"))?;
    out.flush()
}

fn main() -> ExitCode {
    let opts = match parse_args() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("sdpso-echo-model: {e}");
            return ExitCode::from(2);
        }
    };
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut evals = 0u64;
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let request: Request = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                let reply = Reply::Error { id: None, message: format!("bad request: {e}") };
                if emit(&mut out, &reply).is_err() {
                    break;
                }
                continue;
            }
        };
        let result = match request {
            Request::Hello { dim } => emit(
                &mut out,
                &Reply::Ready { dim: opts.declare_dim.unwrap_or(dim) },
            ),
            Request::Bye => return ExitCode::SUCCESS,
            Request::Eval { id, x } => {
                evals += 1;
                if !opts.sleep.is_zero() {
                    thread::sleep(opts.sleep);
                }
                let value = opts.function.eval(&x);
                match opts.fault.filter(|_| evals > opts.fault_after) {
                    None => emit(&mut out, &Reply::Fitness { id, value, aux: None }),
                    Some(Fault::WrongId) => {
                        emit(&mut out, &Reply::Fitness { id: id + 1000, value, aux: None })
                    }
                    Some(Fault::Malformed) => {
                        writeln!(out, "{{\"type\":\"fitness\",\"id\":{id},\"value\":").and_then(|_| out.flush())
                    }
                    Some(Fault::Exit) => {
                        eprintln!("sdpso-echo-model: simulated crash at request {id}");
                        return ExitCode::from(3);
                    }
                    Some(Fault::Hang) => loop {
                        thread::sleep(Duration::from_secs(3600));
                    },
                }
            }
        };
        if result.is_err() {
            break;
        }
    }
    ExitCode::SUCCESS
}
