use ctfusion::graph::{Estimator, Measurement};
use ctfusion::pipeline::{initial_state, RunConfig};
use ctfusion::sim::{simulate, Scenario, Simulation};

fn setup(duration: f64, seed: u64) -> (RunConfig, Simulation) {
    let cfg = RunConfig { scenario: Scenario { name: "estimator".into(), duration_s: duration, seed, ..Default::default() }, ..Default::default() };
    let sim = simulate(&cfg.scenario).unwrap();
    (cfg, sim)
}

fn estimator(cfg: &RunConfig, sim: &Simulation) -> Estimator {
    let est_cfg = cfg.estimator_config();
    let x0 = initial_state(sim, &cfg.settings.init, est_cfg.fusion);
    Estimator::new(est_cfg, x0, &cfg.settings.init.sigmas(est_cfg.fusion)).unwrap()
}

/// Feeds measurements as they become available and steps at 10 Hz up to `t_end`.
fn replay(est: &mut Estimator, measurements: &[Measurement], t_from: f64, t_end: f64) {
    let mut t = t_from;
    while t < t_end - 1e-9 {
        t += 0.1;
        for m in measurements.iter().filter(|m| m.time() > t - 0.1 + 1e-9 && m.time() <= t + 1e-9) {
            est.submit(m.clone());
        }
        est.step(t).unwrap();
    }
}

fn first_gnss_after(measurements: &[Measurement], t: f64) -> Measurement {
    measurements.iter().find(|m| matches!(m, Measurement::Gnss(_)) && m.time() > t).cloned().unwrap()
}

#[test]
fn stale_measurements_are_dropped() {
    let (cfg, sim) = setup(6.0, 1);
    let all = sim.streams.measurements();
    let mut est = estimator(&cfg, &sim);
    replay(&mut est, &all, 0.0, 5.0);
    let before = est.routing_stats();
    assert_eq!(before.dropped, 0);

    est.submit(first_gnss_after(&all, 0.5));
    est.step(5.1).unwrap();
    assert_eq!(est.routing_stats().dropped, before.dropped + 1);
}

#[test]
fn future_measurements_wait_in_the_cache() {
    let (cfg, sim) = setup(8.0, 2);
    let all = sim.streams.measurements();
    let early = first_gnss_after(&all, 6.0);

    let mut plain = estimator(&cfg, &sim);
    replay(&mut plain, &all, 0.0, 7.0);

    let mut with_early = estimator(&cfg, &sim);
    replay(&mut with_early, &all, 0.0, 4.0);
    with_early.submit(early);
    replay(&mut with_early, &all, 4.0, 7.0);

    let (a, b) = (plain.routing_stats(), with_early.routing_stats());
    assert_eq!(b.cached, a.cached + 1);
    assert_eq!(b.synchronized + b.interpolated, a.synchronized + a.interpolated + 1);
    assert_eq!(b.dropped, a.dropped);
}

#[test]
fn window_keeps_the_lag_and_a_consistent_timeline() {
    let (cfg, sim) = setup(8.0, 3);
    let all = sim.streams.measurements();
    let mut est = estimator(&cfg, &sim);
    replay(&mut est, &all, 0.0, 8.0);
    est.window().audit().unwrap();

    let lag = cfg.settings.solver.lag_seconds;
    let spacing = cfg.settings.solver.spacing;
    let states = est.window().states();
    let newest = states.last().unwrap().timestamp;
    assert!(newest > 7.8, "newest {newest}");
    assert!(states[0].timestamp >= newest - lag - spacing - 1e-9);

    let all_states = est.all_states();
    for pair in all_states.windows(2) {
        assert!((pair[1].timestamp - pair[0].timestamp - spacing).abs() < 1e-9);
    }
    assert!((all_states[0].timestamp).abs() < 1e-9);
}

#[test]
fn publisher_exposes_the_newest_optimized_state() {
    let (cfg, sim) = setup(3.0, 4);
    let all = sim.streams.measurements();
    let mut est = estimator(&cfg, &sim);
    let publisher = est.publisher();
    replay(&mut est, &all, 0.0, 2.0);
    let snap = publisher.snapshot().unwrap();
    assert_eq!(snap.state, *est.window().newest().unwrap());
    assert!(snap.covariance.is_some());
    assert!(!snap.stationary);
}

#[test]
fn concurrent_producers_match_a_single_producer() {
    let (cfg, sim) = setup(4.0, 5);
    let all = sim.streams.measurements();

    let run = |split: bool| {
        let mut est = estimator(&cfg, &sim);
        if split {
            let handles: Vec<_> = [0usize, 1, 2]
                .into_iter()
                .map(|lane| {
                    let sink = est.sink();
                    let mine: Vec<Measurement> = all.iter().enumerate().filter(|(k, _)| k % 3 == lane).map(|(_, m)| m.clone()).collect();
                    std::thread::spawn(move || mine.into_iter().for_each(|m| sink.send(m).unwrap()))
                })
                .collect();
            handles.into_iter().for_each(|h| h.join().unwrap());
        } else {
            all.iter().for_each(|m| est.submit(m.clone()));
        }
        for k in 1..=40 {
            est.step(k as f64 * 0.1).unwrap();
        }
        (est.cost().unwrap(), est.routing_stats())
    };
    assert_eq!(run(false), run(true));
}
