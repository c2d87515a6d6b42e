//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

mod common;
#[path = "../../sdp/tests/common/mod.rs"]
mod planted;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{
    cell_probabilities, density, direct_witness, exact, schmidt_rank_state, tt_table, TAU,
};
use timebin_core::certify::{
    choose_pairs, schmidt_witness, witness_value, CertifyOptions, PairStrategy,
};
use timebin_core::config::Config;
use timebin_core::discretize::{measurement_families, process_run, Arm, DiscretizationConfig};
use timebin_core::keyrate::{key_rate, pguess_sdp};
use timebin_core::scan::{simulate_and_scan, RowStatus, ScanReport, ScanRow, ScanSpec};
use timebin_core::sdp::{
    certified_bound, evaluate, primal_residual, solve, Sense, SolverSettings, Status,
};
use timebin_core::simulate::{sample_run, DetectorModel, ModelState, SourceModel};
use timebin_core::tagstream::{
    align_clocks, load_stream, save_stream, Format, Setting, TagStream, TimeTag,
};

const POVM_TOL: f64 = 1e-12;
const WITNESS_TOL: f64 = 1e-9;
const STATES_PER_POINT: usize = 1000;
const EXACT_W_TOL: f64 = 1e-3;
const EXACT_EOF_TOL: f64 = 1e-4;
const EXACT_PGUESS_TOL: f64 = 1e-6;
const EXACT_RATE_TOL: f64 = 1e-4;
const KKT_CASES: usize = 50;
const KKT_GAP_TOL: f64 = 1e-6;
const SIGMA_LIMIT: f64 = 5.0;
const OFFSET_TOL_PS: i64 = 2;

struct Verdict {
    pass: bool,
    detail: String,
}

fn criterion(n: u32, name: &str, limit: Duration, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = f();
    let t = start.elapsed();
    let pass = v.pass && t <= limit;
    println!(
        "criterion {n} {name}: {} ({}; {:.2} s of {} s)",
        if pass { "PASS" } else { "FAIL" },
        v.detail,
        t.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

fn povm_completeness() -> Verdict {
    let mut worst: f64 = 0.0;
    let points = [
        (4, Arm::Nested),
        (8, Arm::Nested),
        (12, Arm::Nested),
        (2, Arm::Single),
        (4, Arm::Single),
        (6, Arm::Single),
        (8, Arm::Single),
    ];
    for (d, arm) in points {
        let cfg = DiscretizationConfig::new(TAU, 3, d, arm);
        for fam in measurement_families(&cfg).unwrap() {
            let n = d * d;
            let mut sum = DMatrix::<f64>::zeros(n, n);
            for c in &fam.elements {
                let m = c.projector(d);
                worst = worst.max((&m * &m - &m).amax());
                sum += m;
            }
            worst = worst.max((sum - DMatrix::<f64>::identity(n, n)).amax());
        }
    }
    Verdict {
        pass: worst < POVM_TOL,
        detail: format!("max of |sum M - I| and |M^2 - M| = {worst:.2e}"),
    }
}

fn witness_soundness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = f64::NEG_INFINITY;
    let mut mismatch: f64 = 0.0;
    for k in 1..=3 {
        for d in [4, 6, 8] {
            for _ in 0..STATES_PER_POINT {
                let psi = schmidt_rank_state(&mut rng, d, k);
                let w = witness_value(&density(&psi), d);
                mismatch = mismatch.max((w - direct_witness(&psi)).abs());
                worst = worst.max(w - k as f64);
            }
        }
    }
    Verdict {
        pass: worst <= WITNESS_TOL && mismatch < 1e-12,
        detail: format!(
            "max W - k = {worst:.2e} over {} states",
            9 * STATES_PER_POINT
        ),
    }
}

fn exact_states() -> Verdict {
    let opts = CertifyOptions::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for d in [4usize, 8] {
        let state = ModelState::phi_plus(d);
        let cs = exact(&state, Arm::Nested);
        let w = schmidt_witness(&cs, &opts).unwrap();
        let e = choose_pairs(&cs, PairStrategy::All, &opts).unwrap();
        let pg = pguess_sdp(&cs, &opts).unwrap();
        let r = key_rate(&cs, &tt_table(&state), 1.0, 1.0, &opts).unwrap();
        let log_d = (d as f64).log2();
        pass &= (w.w_min - d as f64).abs() <= EXACT_W_TOL
            && w.schmidt_number == d
            && (e.eof - log_d).abs() <= EXACT_EOF_TOL
            && (pg.p_guess - 1.0 / d as f64).abs() <= EXACT_PGUESS_TOL
            && (r.key_rate - log_d).abs() <= EXACT_RATE_TOL;
        parts.push(format!(
            "phi+ d={d}: W {:.6} k {} EoF {:.6} p_guess {:.8} R {:.6}",
            w.w_min, w.schmidt_number, e.eof, pg.p_guess, r.key_rate
        ));

        let mixed = exact(&ModelState::maximally_mixed(d), Arm::Nested);
        let w = schmidt_witness(&mixed, &opts).unwrap();
        let e = choose_pairs(&mixed, PairStrategy::All, &opts).unwrap();
        let pg = pguess_sdp(&mixed, &opts).unwrap();
        pass &=
            w.schmidt_number == 1 && e.eof == 0.0 && (pg.p_guess - 1.0).abs() <= EXACT_PGUESS_TOL;
        parts.push(format!(
            "mixed d={d}: k {} EoF {} p_guess {:.8}",
            w.schmidt_number, e.eof, pg.p_guess
        ));
    }
    Verdict {
        pass,
        detail: parts.join("; "),
    }
}

fn kkt_problems() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let settings = SolverSettings {
        gap_tol: 1e-8,
        feas_tol: 1e-9,
        max_iters: 200,
    };
    let (mut worst_gap, mut worst_opt, mut failures): (f64, f64, usize) = (0.0, 0.0, 0);
    for _ in 0..KKT_CASES {
        let case = planted::planted(&mut rng);
        let p = &case.problem;
        let sol = solve(p, &settings).unwrap();
        let scale = 1.0 + case.optimum.abs();
        let bound = match certified_bound(p, &sol, 1e-7) {
            Ok(b) if sol.status == Status::Optimal => b,
            _ => {
                failures += 1;
                continue;
            }
        };
        let objective: f64 = p
            .objective()
            .iter()
            .map(|(v, m)| evaluate(m, &sol.primal[v.index()]))
            .sum();
        let weak = match p.sense() {
            Sense::Minimize => bound <= objective + 1e-9 * scale,
            Sense::Maximize => bound >= objective - 1e-9 * scale,
        };
        let feasible = primal_residual(p, &sol.primal) < 1e-7;
        if !weak || !feasible {
            failures += 1;
        }
        worst_gap = worst_gap.max((objective - bound).abs() / scale);
        worst_opt = worst_opt.max((bound - case.optimum).abs() / scale);
    }
    Verdict {
        pass: failures == 0 && worst_gap < KKT_GAP_TOL && worst_opt < KKT_GAP_TOL,
        detail: format!(
            "{KKT_CASES} problems, {failures} failures, max relative gap {worst_gap:.2e}, max error to planted optimum {worst_opt:.2e}"
        ),
    }
}

/// Dimension of the largest value over the rows of `arms`, and whether it
/// lies strictly inside the scanned range.
fn argmax_interior(
    report: &ScanReport,
    dims: &[usize],
    arms: &[Arm],
    value: impl Fn(&ScanRow) -> Option<f64>,
) -> (usize, bool) {
    let best = report
        .rows
        .iter()
        .filter(|r| r.status == RowStatus::Ok && arms.contains(&r.arm))
        .filter_map(|r| value(r).map(|v| (r.dimension, v)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|x| x.0)
        .unwrap_or(0);
    let lo = *dims.iter().min().unwrap();
    let hi = *dims.iter().max().unwrap();
    (best, best > lo && best < hi)
}

fn dimension_scan() -> Verdict {
    let config = Config::default();
    let dims = config.discretization.dimensions.clone();
    let report = simulate_and_scan(&ScanSpec::from_config(&config)).unwrap();
    let mut lines = Vec::new();
    let (mut ge_everywhere, mut gt_somewhere) = (true, false);
    let mut hxy = Vec::new();
    for &d in &dims {
        let single = report.row(d, Arm::Single).and_then(|r| r.schmidt_number);
        let nested = report.row(d, Arm::Nested).and_then(|r| r.schmidt_number);
        let (s, n) = (single.unwrap_or(0), nested.unwrap_or(0));
        if nested.is_some() {
            ge_everywhere &= n >= s;
            gt_somewhere |= n > s;
        }
        hxy.push(
            report
                .row(d, Arm::Single)
                .and_then(|r| r.h_x_given_y)
                .unwrap_or(f64::NAN),
        );
        for arm in [Arm::Single, Arm::Nested] {
            if let Some(r) = report.row(d, arm).filter(|r| r.status == RowStatus::Ok) {
                lines.push(format!(
                    "    d={d} {arm}: k {} EoF {:.4} E-rate {:.4e} H(X|Y) {:.4} key {:.4e}",
                    r.schmidt_number.unwrap(),
                    r.eof.unwrap(),
                    r.entanglement_rate.unwrap(),
                    r.h_x_given_y.unwrap(),
                    r.key_rate.unwrap()
                ));
            }
        }
    }
    let both = [Arm::Single, Arm::Nested];
    let (e_best, e_interior) = argmax_interior(&report, &dims, &both, |r| r.entanglement_rate);
    let (k_best, k_interior) = argmax_interior(&report, &dims, &both, |r| r.key_rate);
    for arm in both {
        let (e, _) = argmax_interior(&report, &dims, &[arm], |r| r.entanglement_rate);
        let (k, _) = argmax_interior(&report, &dims, &[arm], |r| r.key_rate);
        lines.push(format!(
            "    {arm} arm alone: entanglement rate peaks at d={e}, key rate at d={k}"
        ));
    }
    let monotone = hxy.windows(2).all(|w| w[1] > w[0]);
    let pass = ge_everywhere && gt_somewhere && e_interior && k_interior && monotone;
    for l in &lines {
        println!("{l}");
    }
    Verdict {
        pass,
        detail: format!(
            "(a) nested >= single {ge_everywhere}, strictly somewhere {gt_somewhere}; \
             (b) over both arms entanglement rate peaks at d={e_best}, key rate at d={k_best}; (c) H(X|Y) increasing {monotone}"
        ),
    }
}

fn sampling_and_streams() -> Verdict {
    let d = 4;
    let cfg = DiscretizationConfig::new(TAU, 3, d, Arm::Nested);
    let src = SourceModel {
        dimension: d,
        isotropic_noise: 0.05,
        dephasing_visibility: 0.92,
        pair_rate: 0.05 / (d as f64 * TAU as f64 * 1e-12),
        coherence_time_ps: 1e6,
    };
    let state = src.state().unwrap();
    let frames = 1_000_000u64;
    let mut worst: f64 = 0.0;
    let mut stray = 0usize;
    for (k, sa) in Setting::ALL.into_iter().enumerate() {
        for (l, sb) in Setting::ALL.into_iter().enumerate() {
            let seed = 100 + (3 * k + l) as u64;
            let (a, b) = sample_run(
                &src,
                &DetectorModel::ideal(),
                &cfg,
                (sa, sb),
                frames * d as u64 * TAU,
                seed,
            )
            .unwrap();
            let cm = process_run(&a, &b, &cfg).unwrap();
            let probs = cell_probabilities(&state, sa, sb);
            let norm: f64 = probs.values().sum();
            let n = cm.total_counts() as f64;
            for (cell, p) in &probs {
                let p = p / norm;
                let sigma = (n * p * (1.0 - p)).sqrt().max(1.0);
                worst = worst.max((cm.count(cell) as f64 - n * p).abs() / sigma);
            }
            stray += cm
                .counts()
                .keys()
                .filter(|c| !probs.contains_key(c))
                .count();
        }
    }

    let det = DetectorModel {
        efficiency_alice: 0.3,
        efficiency_bob: 0.3,
        jitter_sigma_ps: 20.0,
        dark_rate: 1e4,
        ..DetectorModel::ideal()
    };
    let src = SourceModel {
        pair_rate: 5e7,
        ..src
    };
    let (a, b) = sample_run(
        &src,
        &det,
        &cfg,
        (Setting::Toa, Setting::Toa),
        200_000_000,
        7,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_offset = 0i64;
    for _ in 0..20 {
        let delta: i64 = rng.random_range(-4000..4000);
        let base = 10_000i64;
        let found =
            align_clocks(&delayed(&a, base), &delayed(&b, base + delta), 5_000, 10).unwrap();
        worst_offset = worst_offset.max((found - delta).abs());
    }

    let dir = tempfile::tempdir().unwrap();
    let mut exact_round_trip = true;
    for format in [Format::Binary, Format::Csv] {
        let path = dir.path().join(format!("a.{}", format.extension()));
        save_stream(&a, &path, format).unwrap();
        exact_round_trip &= load_stream(&path, format).unwrap() == a;
    }
    Verdict {
        pass: worst < SIGMA_LIMIT && stray == 0 && worst_offset <= OFFSET_TOL_PS && exact_round_trip,
        detail: format!(
            "max deviation {worst:.2} sigma over 9 setting pairs; clock offset error <= {worst_offset} ps; round trip exact {exact_round_trip}"
        ),
    }
}

fn delayed(s: &TagStream, by: i64) -> TagStream {
    let mut meta = *s.meta();
    meta.duration_ps += by as u64;
    let tags = s
        .tags()
        .iter()
        .map(|t| TimeTag::new(t.time_ps + by as u64, t.channel))
        .collect();
    TagStream::new(tags, meta).unwrap()
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let results = [
        criterion(1, "POVM completeness", secs(10), povm_completeness),
        criterion(2, "witness soundness", secs(60), witness_soundness),
        criterion(
            3,
            "exact maximally entangled and mixed states",
            secs(300),
            exact_states,
        ),
        criterion(4, "planted KKT SDPs", secs(120), kkt_problems),
        criterion(5, "dimension scan", secs(600), dimension_scan),
        criterion(
            6,
            "sampling, clock alignment and stream round trip",
            secs(120),
            sampling_and_streams,
        ),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
