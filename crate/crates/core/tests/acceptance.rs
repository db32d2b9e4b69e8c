//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line
//! and then asserts; run with `--nocapture` to see the summary.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pli_core::harness::generator::generate_client;
use pli_core::harness::leakscan::LeakScanner;
use pli_core::harness::metrics::metrics_csv;
use pli_core::harness::sim::EvalSet;
use pli_core::harness::{derive_seed, generator, run_simulation, simulate, SimConfig, SimOptions};
use pli_core::hub::{AcceptancePolicy, ClientUpdate, Decision, Hub};
use pli_core::privacy::{add_gaussian_noise, clip_update, l2_norm, sanitize, ClipConfig, NoiseConfig};
use pli_core::scoring::{score_variable, Variable};
use pli_core::trainer::{
    gradient_descent, gradient_step, kmeans_fit, loss_and_gradient, map_labels, prepare_local, FeatureMatrix,
    PerformanceLabel, TrainConfig,
};
use pli_core::transport::{
    counter_nonce, decode_payload, derive_link_key, encode_payload, open, open_bytes, seal, ChannelConfig, Direction,
    Envelope, EnvelopeHeader, LatencySpec, MsgType, ParamPayload, ParticipantId, Sealer, SimChannel,
};

fn verdict(n: u32, name: &str, pass: bool, detail: String) {
    println!(
        "criterion {n:>2}: {} {name} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

// ---------------------------------------------------------------- 1

struct Row {
    var: Variable,
    low: f64,
    points: u8,
}

fn table_fixture() -> Vec<(Variable, f64, Option<f64>, u8)> {
    let text = include_str!("data/scoring_bins.csv");
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let var = Variable::ALL
                .into_iter()
                .find(|v| v.symbol() == f[0])
                .unwrap_or_else(|| panic!("unknown variable {}", f[0]));
            let high = (!f[2].is_empty()).then(|| f[2].parse().unwrap());
            (var, f[1].parse().unwrap(), high, f[3].parse().unwrap())
        })
        .collect()
}

/// Rows are lower-inclusive and run up to the next row's lower bound.
fn fixture_band(rows: &[Row], var: Variable, x: f64) -> u8 {
    rows.iter()
        .filter(|r| r.var == var && x >= r.low)
        .map(|r| r.points)
        .next_back()
        .unwrap_or(0)
}

#[test]
fn criterion_01_table_conformance() {
    let start = Instant::now();
    let fixture = table_fixture();
    let rows: Vec<Row> = fixture
        .iter()
        .map(|&(var, low, _, points)| Row { var, low, points })
        .collect();
    let mut probes: Vec<(Variable, f64)> = Vec::new();
    for &(var, low, high, _) in &fixture {
        let mut anchors = vec![low];
        anchors.extend(high);
        for a in anchors {
            for x in [
                a - 1.0,
                a,
                a + 1.0,
                f64::from_bits(a.to_bits() - 1),
                f64::from_bits(a.to_bits() + 1),
            ] {
                if x >= 0.0 && x <= var.domain_max() {
                    probes.push((var, x));
                }
            }
        }
        probes.push((var, 0.0));
        probes.push((var, var.domain_max().min(1e6)));
    }
    let mut mismatches = Vec::new();
    for &(var, x) in &probes {
        let got = score_variable(var, x).map(|s| s.value());
        let want = fixture_band(&rows, var, x);
        if got.as_ref().ok() != Some(&want) {
            mismatches.push(format!("{}={x}: got {got:?}, want {want}", var.symbol()));
        }
    }
    // out-of-domain values are rejected
    for (var, x) in [
        (Variable::C, 100.5),
        (Variable::Q, 101.0),
        (Variable::F, 10.5),
        (Variable::D, -1.0),
    ] {
        if score_variable(var, x).is_ok() {
            mismatches.push(format!("{}={x} accepted", var.symbol()));
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches.is_empty() && within(elapsed, 1.0);
    verdict(
        1,
        "scoring table conformance",
        pass,
        format!(
            "{} probes, {} mismatches, {:?}",
            probes.len(),
            mismatches.len(),
            elapsed
        ),
    );
    assert!(mismatches.is_empty(), "{mismatches:#?}");
    assert!(within(elapsed, 1.0));
}

// ---------------------------------------------------------------- 2

/// Mean cross-entropy plus (l2/2)|w|^2, written out directly.
fn oracle_loss(params: &[f64], rows: &[Vec<f64>], y: &[f64], l2: f64) -> f64 {
    let d = params.len() - 1;
    let mut total = 0.0;
    for (r, &t) in rows.iter().zip(y) {
        let z: f64 = r.iter().zip(params).map(|(x, w)| x * w).sum::<f64>() + params[d];
        let p = 1.0 / (1.0 + (-z).exp());
        total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    total / rows.len() as f64 + 0.5 * l2 * params[..d].iter().map(|w| w * w).sum::<f64>()
}

#[test]
fn criterion_02_gradient_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut loss_mismatch: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.gen_range(1..=6);
        let n = rng.gen_range(2..=20);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..=1u8))).collect();
        let params: Vec<f64> = (0..=d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let l2 = rng.gen_range(0.0..0.1);
        let names = (0..d).map(|i| format!("x{i}")).collect();
        let m = FeatureMatrix::new(names, rows.clone(), Default::default()).unwrap();
        let (loss, grad) = loss_and_gradient(&params, &m, &y, l2);
        loss_mismatch = loss_mismatch.max((loss - oracle_loss(&params, &rows, &y, l2)).abs());
        for k in 0..=d {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus[k] += h;
            minus[k] -= h;
            let fd = (loss_and_gradient(&plus, &m, &y, l2).0 - loss_and_gradient(&minus, &m, &y, l2).0) / (2.0 * h);
            let rel = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-5 && loss_mismatch < 1e-12 && within(elapsed, 5.0);
    verdict(
        2,
        "gradient vs finite differences",
        pass,
        format!("100 instances, worst rel err {worst:.2e}, {:?}", elapsed),
    );
    assert!(worst < 1e-5, "worst relative error {worst}");
    assert!(loss_mismatch < 1e-12, "loss differs from oracle by {loss_mismatch}");
    assert!(within(elapsed, 5.0));
}

// ---------------------------------------------------------------- 3

fn brute_force_inertia(points: &[f64]) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    // point 0 fixed in group 0; both groups non-empty
    for mask in 1u32..(1 << (n - 1)) {
        let mut groups: [Vec<f64>; 2] = [vec![points[0]], vec![]];
        for (i, &p) in points.iter().enumerate().skip(1) {
            groups[((mask >> (i - 1)) & 1) as usize].push(p);
        }
        let inertia: f64 = groups
            .iter()
            .map(|g| {
                let mean = g.iter().sum::<f64>() / g.len() as f64;
                g.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
            })
            .sum();
        best = best.min(inertia);
    }
    best
}

#[test]
fn criterion_03_kmeans_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_gap: f64 = 0.0;
    let mut label_failures = 0;
    let trials = 100;
    for t in 0..trials {
        let n_low = rng.gen_range(1..=6);
        let n_high = rng.gen_range(1..=6);
        let mut points: Vec<f64> = (0..n_low).map(|_| rng.gen_range(0.0..2.0)).collect();
        points.extend((0..n_high).map(|_| rng.gen_range(8.0..10.0)));
        // shuffle so the cluster structure is not positional
        for i in (1..points.len()).rev() {
            points.swap(i, rng.gen_range(0..=i));
        }
        let (model, assign) = kmeans_fit(&points, t).unwrap();
        worst_gap = worst_gap.max((model.inertia - brute_force_inertia(&points)).abs());

        let labels = map_labels(&model, &assign);
        let hi = if model.centroids[0] > model.centroids[1] { 0 } else { 1 };
        for ((p, a), l) in points.iter().zip(&assign).zip(&labels) {
            let want = if *a == hi {
                PerformanceLabel::HighPerformer
            } else {
                PerformanceLabel::LowPerformer
            };
            if *l != want || (*p >= 8.0) != (*l == PerformanceLabel::HighPerformer) {
                label_failures += 1;
            }
        }
    }
    let pass = worst_gap <= 1e-9 && label_failures == 0;
    verdict(
        3,
        "k-means vs brute-force partition",
        pass,
        format!("{trials} trials, max inertia gap {worst_gap:.1e}, {label_failures} label errors"),
    );
    assert!(worst_gap <= 1e-9);
    assert_eq!(label_failures, 0);
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_04_federated_equals_centralized() {
    let start = Instant::now();
    let cfg = SimConfig {
        n_clients: 4,
        learners_per_client: 25,
        weeks: 4,
        ..Default::default()
    };
    let train = TrainConfig { epochs: 1, ..cfg.train };
    let clip = ClipConfig { max_norm: 1e12 };
    let no_noise = NoiseConfig::default();
    let psk = cfg.psk();

    let prepared: Vec<_> = (0..cfg.n_clients)
        .map(|c| {
            let data = generate_client(&cfg, c, None);
            prepare_local(
                &data.snapshots,
                cfg.features,
                derive_seed(cfg.master_seed, &format!("kmeans/client/{c}")),
            )
            .unwrap()
        })
        .collect();
    let d = prepared[0].matrix.n_cols();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base: Vec<f64> = (0..=d).map(|_| rng.gen_range(-0.5..0.5)).collect();

    let mut hub = Hub::new(base.clone());
    let round = hub.open_round(cfg.n_clients, 10).unwrap();
    let mut channel = SimChannel::new(ChannelConfig {
        loss_probability: 0.0,
        latency: LatencySpec::Fixed { ticks: 1 },
        seed: 4,
    });
    for (c, p) in prepared.iter().enumerate() {
        let y: Vec<f64> = p.labels.iter().map(|l| l.as_f64()).collect();
        let local = gradient_step(&base, &p.matrix, &y, &train);
        let delta: Vec<f64> = local.iter().zip(&base).map(|(a, b)| a - b).collect();
        let s = sanitize(&delta, &clip, &no_noise).unwrap();
        assert!(!s.clipped);
        let id = ParticipantId::client(c as u32);
        let mut sealer = Sealer::new(&psk, id, Direction::ClientToHub);
        let env = sealer
            .seal_payload(
                MsgType::UpdateSubmit,
                round.round_id,
                &ParamPayload {
                    params: s.delta,
                    sample_count: p.matrix.n_rows() as u32,
                    base_version: round.base_version,
                },
            )
            .unwrap();
        channel.send(id, ParticipantId::HUB, &env, 0);
    }
    for delivery in channel.drain() {
        let (header, payload) = open_bytes(&delivery.bytes, &psk).unwrap();
        hub.submit_update(ClientUpdate {
            client_id: header.sender_id,
            base_version: payload.base_version,
            delta: payload.params,
            sample_count: payload.sample_count,
            round_id: header.round_id,
        });
    }
    let candidate = hub.aggregate().unwrap();

    let parts: Vec<&FeatureMatrix> = prepared.iter().map(|p| &p.matrix).collect();
    let pooled = FeatureMatrix::concat(&parts).unwrap();
    let pooled_y: Vec<f64> = prepared
        .iter()
        .flat_map(|p| p.labels.iter().map(|l| l.as_f64()))
        .collect();
    let central = gradient_step(&base, &pooled, &pooled_y, &train);
    // the iterative trainer takes the same single step
    let labels: Vec<PerformanceLabel> = prepared.iter().flat_map(|p| p.labels.iter().copied()).collect();
    let via_gd = gradient_descent(&base, &pooled, &labels, &train).unwrap().params;

    let max_diff = candidate
        .iter()
        .zip(&central)
        .chain(via_gd.iter().zip(&central))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let pass = max_diff <= 1e-9 && within(elapsed, 5.0);
    verdict(
        4,
        "federated round equals centralized step",
        pass,
        format!("{} params, max diff {max_diff:.1e}, {:?}", candidate.len(), elapsed),
    );
    assert!(max_diff <= 1e-9, "max diff {max_diff}");
    assert!(within(elapsed, 5.0));
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_05_end_to_end_learning() {
    let start = Instant::now();
    let cfg = SimConfig::default();
    let out = run_simulation(&cfg).unwrap();
    let elapsed = start.elapsed();
    let fed = out.final_model.validation_accuracy.unwrap_or(0.0);
    let central = out.centralized_accuracy.expect("centralized oracle enabled by default");
    let pass = (fed - central).abs() <= 0.03 && fed >= 0.90 && within(elapsed, 60.0);
    verdict(
        5,
        "end-to-end learning",
        pass,
        format!("federated {fed:.4}, centralized {central:.4}, {:?}", elapsed),
    );
    assert_eq!(out.records.len(), 20);
    assert!((fed - central).abs() <= 0.03);
    assert!(fed >= 0.90);
    assert!(within(elapsed, 60.0));
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_06_dp_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut clip_violations = 0;
    let mut identity_failures = 0;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=32);
        let scale = 10f64.powi(rng.gen_range(-3..=4));
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        let max_norm = rng.gen_range(0.01..10.0);
        let clip = ClipConfig { max_norm };
        let (c, _, _) = clip_update(&v, &clip).unwrap();
        if l2_norm(&c) > max_norm {
            clip_violations += 1;
        }
        let s = sanitize(
            &v,
            &clip,
            &NoiseConfig {
                noise_multiplier: 0.0,
                seed: rng.gen(),
            },
        )
        .unwrap();
        if s.delta != c {
            identity_failures += 1;
        }
    }

    let n = 10_000;
    let mut noise_ok = true;
    let mut detail = String::new();
    for (max_norm, sigma) in [(1.0, 1.0), (2.5, 0.8)] {
        let clip = ClipConfig { max_norm };
        let noisy = add_gaussian_noise(
            &vec![0.0; n],
            &clip,
            &NoiseConfig {
                noise_multiplier: sigma,
                seed: 6,
            },
        );
        let sd_true = sigma * max_norm;
        let mean = noisy.iter().sum::<f64>() / n as f64;
        let sd = (noisy.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let ok = mean.abs() <= 4.0 * sd_true / (n as f64).sqrt() && (sd / sd_true - 1.0).abs() <= 0.03;
        noise_ok &= ok;
        detail.push_str(&format!("sd {sd:.4}/{sd_true}, mean {mean:.4}; "));
    }
    let pass = clip_violations == 0 && identity_failures == 0 && noise_ok;
    verdict(
        6,
        "differential privacy invariants",
        pass,
        format!("{clip_violations} clip violations, {identity_failures} identity failures; {detail}"),
    );
    assert_eq!(clip_violations, 0);
    assert_eq!(identity_failures, 0);
    assert!(noise_ok, "{detail}");
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_07_poisoning_rolls_back() {
    let trials = 20;
    let mut rolled_back = 0;
    let mut identical = 0;
    let mut max_candidate_acc: f64 = 0.0;
    for trial in 0..trials {
        let cfg = SimConfig {
            n_clients: 4,
            learners_per_client: 20,
            weeks: 4,
            validation_learners: 60,
            master_seed: 7_000 + trial,
            ..Default::default()
        };
        let honest: Vec<_> = (0..cfg.n_clients - 1)
            .map(|c| {
                let data = generate_client(&cfg, c, None);
                prepare_local(
                    &data.snapshots,
                    cfg.features,
                    derive_seed(cfg.master_seed, &format!("kmeans/client/{c}")),
                )
                .unwrap()
            })
            .collect();
        let (vs, vl) = generator::generate_validation(&cfg, None);
        let eval = EvalSet::from_snapshots(&vs, vl, &cfg).unwrap();
        let evaluator = |p: &[f64]| eval.evaluate(p);
        let policy = AcceptancePolicy::default();
        let d = honest[0].matrix.n_cols();
        let mut hub = Hub::new(vec![0.0; d + 1]);
        for c in 0..cfg.n_clients {
            hub.register_client(ParticipantId::client(c as u32));
        }

        let run_round = |hub: &mut Hub, adversary: bool| {
            let round = hub.open_round(1, 10).unwrap();
            let base = hub.current_model().params.clone();
            for (c, p) in honest.iter().enumerate() {
                let run = gradient_descent(&base, &p.matrix, &p.labels, &cfg.train).unwrap();
                hub.submit_update(ClientUpdate {
                    client_id: ParticipantId::client(c as u32),
                    base_version: round.base_version,
                    delta: run.params.iter().zip(&base).map(|(a, b)| a - b).collect(),
                    sample_count: p.matrix.n_rows() as u32,
                    round_id: round.round_id,
                });
            }
            if adversary {
                // flip the model far past zero: every prediction inverts
                let delta: Vec<f64> = base.iter().map(|w| -1e6 * w).collect();
                hub.submit_update(ClientUpdate {
                    client_id: ParticipantId::client(cfg.n_clients as u32 - 1),
                    base_version: round.base_version,
                    delta,
                    sample_count: honest[0].matrix.n_rows() as u32,
                    round_id: round.round_id,
                });
            }
            let candidate = hub.aggregate().unwrap();
            hub.consensus_accept(candidate, &policy, evaluator).unwrap()
        };

        assert!(run_round(&mut hub, false).is_accepted());
        let before = hub.distribute().unwrap();
        let decision = run_round(&mut hub, true);
        let after = hub.distribute().unwrap();
        if let Decision::RolledBack { candidate_accuracy, .. } = decision {
            rolled_back += 1;
            max_candidate_acc = max_candidate_acc.max(candidate_accuracy.unwrap_or(1.0));
        }
        if before.len() == cfg.n_clients && before == after {
            identical += 1;
        }
    }
    let pass = rolled_back == trials && identical == trials;
    verdict(
        7,
        "poisoned round rolls back",
        pass,
        format!("{rolled_back}/{trials} rolled back, {identical}/{trials} byte-identical, worst poisoned accuracy {max_candidate_acc:.3}"),
    );
    assert_eq!(rolled_back, trials);
    assert_eq!(identical, trials);
}

// ---------------------------------------------------------------- 8

const GOLDEN_PAYLOAD: &[u8] = include_bytes!("data/golden_payload.bin");
const GOLDEN_ENVELOPE: &[u8] = include_bytes!("data/golden_envelope.bin");

/// Fixture parameters: psk = 0x00..0x1f, client 3, round 5, counter 7,
/// client-to-hub, payload [0.5, -1.25, 3.0] / 50 samples / base version 4.
fn golden_inputs() -> ([u8; 32], EnvelopeHeader, ParamPayload, [u8; 12]) {
    let mut psk = [0u8; 32];
    for (i, b) in psk.iter_mut().enumerate() {
        *b = i as u8;
    }
    let header = EnvelopeHeader {
        msg_type: MsgType::UpdateSubmit,
        sender_id: ParticipantId::client(3),
        round_id: 5,
    };
    let payload = ParamPayload {
        params: vec![0.5, -1.25, 3.0],
        sample_count: 50,
        base_version: 4,
    };
    (psk, header, payload, counter_nonce(7, Direction::ClientToHub))
}

#[test]
fn criterion_08_transport() {
    let (psk, header, payload, nonce) = golden_inputs();
    let key = derive_link_key(&psk, header.sender_id);

    let golden_ok = decode_payload(GOLDEN_PAYLOAD).unwrap() == payload
        && encode_payload(&payload).unwrap() == GOLDEN_PAYLOAD
        && open_bytes(GOLDEN_ENVELOPE, &psk).unwrap() == (header, payload.clone())
        && seal(header, GOLDEN_PAYLOAD, &key, nonce).unwrap().to_bytes() == GOLDEN_ENVELOPE;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut fuzz_failures = 0;
    let mut sealers: BTreeMap<u32, Sealer> = BTreeMap::new();
    for _ in 0..10_000 {
        let n = rng.gen_range(0..48);
        let params: Vec<f64> = (0..n)
            .map(|_| loop {
                let x = f64::from_bits(rng.gen());
                if x.is_finite() {
                    break x;
                }
            })
            .collect();
        let p = ParamPayload {
            params,
            sample_count: rng.gen(),
            base_version: rng.gen(),
        };
        let client = rng.gen_range(0..8u32);
        let sealer = sealers
            .entry(client)
            .or_insert_with(|| Sealer::new(&psk, ParticipantId::client(client), Direction::ClientToHub));
        let round = rng.gen();
        let env = sealer.seal_payload(MsgType::UpdateSubmit, round, &p).unwrap();
        let bytes = env.to_bytes();
        let ok = matches!(open_bytes(&bytes, &psk), Ok((h, q)) if h == env.header && q.params.iter().map(|x| x.to_bits()).eq(p.params.iter().map(|x| x.to_bits())) && q.sample_count == p.sample_count && q.base_version == p.base_version)
            && Envelope::from_bytes(&bytes).unwrap() == env;
        if !ok {
            fuzz_failures += 1;
        }
    }

    let mut undetected = 0;
    let total_bits = GOLDEN_ENVELOPE.len() * 8;
    for bit in 0..total_bits {
        let mut t = GOLDEN_ENVELOPE.to_vec();
        t[bit / 8] ^= 1 << (bit % 8);
        let detected = match Envelope::from_bytes(&t) {
            Err(_) => true,
            Ok(env) => open(&env, &derive_link_key(&psk, env.header.sender_id)).is_err(),
        };
        if !detected {
            undetected += 1;
        }
    }
    let pass = golden_ok && fuzz_failures == 0 && undetected == 0;
    verdict(
        8,
        "transport fixtures, fuzz and tamper",
        pass,
        format!("golden {golden_ok}, 10000 fuzz round trips with {fuzz_failures} failures, {undetected}/{total_bits} bit flips undetected"),
    );
    assert!(golden_ok);
    assert_eq!(fuzz_failures, 0);
    assert_eq!(undetected, 0);
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_09_determinism() {
    let n_workers = std::thread::available_parallelism().map_or(4, |n| n.get()).clamp(2, 8);
    let mut outputs = Vec::new();
    for workers in [1, n_workers] {
        let cfg = SimConfig {
            workers,
            ..Default::default()
        };
        for _ in 0..2 {
            let out = run_simulation(&cfg).unwrap();
            outputs.push((workers, metrics_csv(&out.records), out.final_model_bytes()));
        }
    }
    let same_runs = outputs[0].1 == outputs[1].1 && outputs[0].2 == outputs[1].2;
    let same_runs_n = outputs[2].1 == outputs[3].1 && outputs[2].2 == outputs[3].2;
    let same_across = outputs[0].1 == outputs[2].1 && outputs[0].2 == outputs[2].2;
    let pass = same_runs && same_runs_n && same_across;
    verdict(
        9,
        "determinism",
        pass,
        format!("1 worker repeat {same_runs}, {n_workers} workers repeat {same_runs_n}, 1 vs {n_workers} identical {same_across}"),
    );
    assert!(same_runs && same_runs_n && same_across);
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_privacy_boundary() {
    let cfg = SimConfig::default();
    let out = simulate(
        &cfg,
        &SimOptions {
            trace_wire: true,
            drift: None,
        },
    )
    .unwrap();
    let clients = generator::generate_learners(&cfg);
    let scanner = LeakScanner::new(clients.iter().flat_map(|c| c.snapshots.iter()));
    let blobs: Vec<&[u8]> = out
        .wire
        .iter()
        .flat_map(|w| [w.plaintext.as_slice(), w.envelope.as_slice()])
        .collect();
    let report = scanner.scan(blobs.iter().copied(), &[&out.hub_log, &out.channel_log]);
    // the scanner itself must catch a planted value
    let planted = clients[0].snapshots[0].time_spent_hours.to_le_bytes();
    let canary = scanner.scan([planted.as_slice()], &[]);
    let pass = report.is_clean() && !canary.is_clean() && report.blobs_scanned > 0 && report.lines_scanned > 0;
    verdict(
        10,
        "no raw tracking values leave clients",
        pass,
        format!(
            "{} patterns, {} blobs, {} log lines, {} findings",
            scanner.pattern_count(),
            report.blobs_scanned,
            report.lines_scanned,
            report.findings.len()
        ),
    );
    assert!(
        report.is_clean(),
        "{:?}",
        &report.findings[..report.findings.len().min(10)]
    );
    assert!(!canary.is_clean());
    assert!(report.blobs_scanned > 0 && report.lines_scanned > 0);
}
