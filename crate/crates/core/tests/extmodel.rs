use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;
use sdpso_core::extmodel::{EndpointError, EndpointSpec, EndpointState, ModelEndpoint, RemoteObjective};
use sdpso_core::objectives::{spherical, Objective};
use sdpso_core::{seeded_stream, Bounds};

const ECHO: &str = env!("CARGO_BIN_EXE_sdpso-echo-model");

fn spec(dim: usize, args: &[&str]) -> EndpointSpec {
    EndpointSpec::new(
        ECHO,
        args.iter().map(|s| s.to_string()).collect(),
        Bounds::uniform(dim, -5.0, 5.0).unwrap(),
    )
}

/// Runs `f` on a helper thread and fails the test if it takes over 5 s.
fn within_5s<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let _ = tx.send(f());
    });
    rx.recv_timeout(Duration::from_secs(5))
        .expect("operation did not finish within 5 s")
}

#[test]
fn hundred_evaluations_match_spherical() {
    within_5s(|| {
        let mut ep = ModelEndpoint::spawn(spec(6, &[])).unwrap();
        let mut rng = seeded_stream(11, 0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-5.0..=5.0)).collect();
            let got = ep.evaluate_remote(&x).unwrap();
            assert!((got - spherical(&x)).abs() <= 1e-9, "{got} vs {}", spherical(&x));
        }
        let report = ep.shutdown();
        assert!(!report.forced);
        assert_eq!(ep.state(), EndpointState::Closed);
    });
}

#[test]
fn known_point_over_the_wire() {
    within_5s(|| {
        let mut ep = ModelEndpoint::spawn(spec(2, &[])).unwrap();
        assert_eq!(ep.evaluate_remote(&[1.0, 2.0]).unwrap(), 5.0);
        ep.shutdown();
    });
}

#[test]
fn ids_stay_paired_with_requests() {
    within_5s(|| {
        let mut ep = ModelEndpoint::spawn(spec(1, &[])).unwrap();
        for i in 0..20 {
            let x = [i as f64 / 10.0];
            let id = ep.begin_eval(&x).unwrap();
            assert_eq!(id, i + 1);
            assert_eq!(ep.finish_eval().unwrap(), x[0] * x[0]);
        }
        ep.shutdown();
    });
}

#[test]
fn second_request_while_in_flight_is_rejected() {
    within_5s(|| {
        let mut ep = ModelEndpoint::spawn(spec(1, &[])).unwrap();
        ep.begin_eval(&[0.5]).unwrap();
        assert!(matches!(ep.begin_eval(&[0.5]), Err(EndpointError::Protocol(_))));
        assert_eq!(ep.finish_eval().unwrap(), 0.25);
        ep.shutdown();
    });
}

#[test]
fn out_of_bounds_point_is_not_sent() {
    within_5s(|| {
        let mut ep = ModelEndpoint::spawn(spec(2, &[])).unwrap();
        assert!(matches!(
            ep.evaluate_remote(&[0.0, 9.0]),
            Err(EndpointError::OutOfBounds(_))
        ));
        assert_eq!(ep.state(), EndpointState::Ready);
        assert_eq!(ep.evaluate_remote(&[0.0, 1.0]).unwrap(), 1.0);
        ep.shutdown();
    });
}

#[test]
fn model_delay_is_observed() {
    within_5s(|| {
        let mut ep = ModelEndpoint::spawn(spec(2, &["--sleep", "0.2"])).unwrap();
        let start = Instant::now();
        ep.evaluate_remote(&[0.0, 0.0]).unwrap();
        assert!(start.elapsed() >= Duration::from_millis(200));
        ep.shutdown();
    });
}

#[test]
fn timeout_is_a_typed_error() {
    within_5s(|| {
        let s = spec(2, &["--fault", "hang"]).with_timeout(Duration::from_millis(300));
        let mut ep = ModelEndpoint::spawn(s).unwrap();
        let err = ep.evaluate_remote(&[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, EndpointError::Timeout { id: 1, .. }), "{err}");
        assert_eq!(ep.state(), EndpointState::Failed);
        assert!(matches!(ep.evaluate_remote(&[1.0, 1.0]), Err(EndpointError::NotReady(_))));
    });
}

#[test]
fn malformed_reply_is_a_protocol_error() {
    within_5s(|| {
        let mut ep = ModelEndpoint::spawn(spec(2, &["--fault", "malformed", "--fault-after", "3"])).unwrap();
        for _ in 0..3 {
            ep.evaluate_remote(&[1.0, 0.0]).unwrap();
        }
        let err = ep.evaluate_remote(&[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, EndpointError::Protocol(_)), "{err}");
        assert_eq!(ep.state(), EndpointState::Failed);
    });
}

#[test]
fn mismatched_reply_id_is_a_protocol_error() {
    within_5s(|| {
        let mut ep = ModelEndpoint::spawn(spec(2, &["--fault", "wrong-id"])).unwrap();
        let err = ep.evaluate_remote(&[1.0, 0.0]).unwrap_err();
        assert!(err.to_string().contains("does not match"), "{err}");
    });
}

#[test]
fn early_exit_is_reported_with_status_and_stderr() {
    within_5s(|| {
        let mut ep = ModelEndpoint::spawn(spec(2, &["--fault", "exit", "--fault-after", "1"])).unwrap();
        ep.evaluate_remote(&[1.0, 0.0]).unwrap();
        let err = ep.evaluate_remote(&[1.0, 0.0]).unwrap_err();
        match &err {
            EndpointError::Exited { status, stderr } => {
                assert!(status.contains('3'), "{status}");
                assert!(stderr.contains("simulated crash"), "{stderr}");
            }
            other => panic!("expected exit error, got {other}"),
        }
    });
}

#[test]
fn declared_dimension_must_match() {
    within_5s(|| {
        let err = ModelEndpoint::spawn(spec(6, &["--declare-dim", "5"])).unwrap_err();
        assert!(
            matches!(err, EndpointError::DimensionMismatch { expected: 6, declared: 5 }),
            "{err}"
        );
    });
}

#[test]
fn missing_program_is_a_launch_error() {
    let s = EndpointSpec::new("/nonexistent/model", vec![], Bounds::uniform(1, 0.0, 1.0).unwrap());
    assert!(matches!(ModelEndpoint::spawn(s), Err(EndpointError::Launch { .. })));
}

#[test]
fn shutdown_without_evaluations_and_twice() {
    within_5s(|| {
        let mut ep = ModelEndpoint::spawn(spec(3, &[])).unwrap();
        let first = ep.shutdown();
        assert!(!first.forced && !first.already_closed);
        let second = ep.shutdown();
        assert!(second.already_closed);
        assert!(matches!(ep.evaluate_remote(&[0.0; 3]), Err(EndpointError::NotReady(EndpointState::Closed))));
    });
}

#[test]
fn shutdown_with_a_request_in_flight() {
    within_5s(|| {
        let mut ep = ModelEndpoint::spawn(spec(2, &["--sleep", "0.3"])).unwrap();
        let id = ep.begin_eval(&[1.0, 1.0]).unwrap();
        let report = ep.shutdown();
        assert_eq!(report.aborted_request, Some(id));
        assert!(!report.forced);
        assert_eq!(ep.state(), EndpointState::Closed);
    });
}

#[test]
fn unresponsive_model_is_killed_after_grace() {
    within_5s(|| {
        let mut s = spec(2, &["--fault", "hang"]);
        s.shutdown_grace = Duration::from_millis(200);
        let mut ep = ModelEndpoint::spawn(s).unwrap();
        ep.begin_eval(&[0.0, 0.0]).unwrap();
        let start = Instant::now();
        let report = ep.shutdown();
        assert!(report.forced);
        assert!(start.elapsed() < Duration::from_secs(2));
    });
}

#[test]
fn remote_objective_evaluates_like_the_benchmark() {
    within_5s(|| {
        let mut obj = RemoteObjective::spawn(spec(3, &["--function", "rastrigin"])).unwrap();
        assert_eq!(obj.dim(), 3);
        let x = [0.5, -1.0, 2.0];
        let expected = sdpso_core::objectives::rastrigin(&x);
        assert!((obj.evaluate(&x).unwrap() - expected).abs() <= 1e-9);
    });
}

#[test]
fn echo_model_survives_garbage_and_exits_cleanly() {
    within_5s(|| {
        let mut child = Command::new(ECHO)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut stdin = child.stdin.take().unwrap();
        let mut out = BufReader::new(child.stdout.take().unwrap());
        let mut line = String::new();
        writeln!(stdin, "this is not json").unwrap();
        out.read_line(&mut line).unwrap();
        assert!(line.contains("\"type\":\"error\""), "{line}");
        line.clear();
        writeln!(stdin, r#"{{"type":"eval","id":7,"x":[1.0,2.0]}}"#).unwrap();
        out.read_line(&mut line).unwrap();
        assert_eq!(line.trim(), r#"{"type":"fitness","id":7,"value":5.0}"#);
        writeln!(stdin, r#"{{"type":"bye"}}"#).unwrap();
        assert!(child.wait().unwrap().success());
    });
}

#[test]
fn distributed_run_against_external_models() {
    let text = format!(
        "problem = \"external\"\nmodel_command = [{ECHO:?}]\nlo = -5.0\nhi = 5.0\ndim = 3\nswarms = 2\npop_size = 8\nt_max = 160\npsi = 5\nhidden = [4, 2]\n"
    );
    let config = sdpso_core::RunConfig::from_file(sdpso_core::ConfigFile::parse(&text).unwrap()).unwrap();
    let result = within_5s(move || sdpso_core::run_config(&config).unwrap());
    assert_eq!(result.swarms.len(), 2);
    assert!(result.best_fitness.is_finite() && result.best_fitness >= 0.0);
    assert!((spherical(&result.best_position) - result.best_fitness).abs() <= 1e-9);
    assert!(!result.log.training.is_empty());
}
