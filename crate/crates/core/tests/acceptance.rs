//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use common::*;
use tiltid::coherence::commutativity_residual;
use tiltid::countable::{
    log_normalizer_truncated, CertificateStatus, FiniteEmbedded, Geometric, Payoff,
    TruncationConfig,
};
use tiltid::dist::{Assignment, DistVector};
use tiltid::fixtures;
use tiltid::identification::{
    apply_gauge, calibrate_rewards, check_admissibility, construct_posterior, context_problem,
    direction_contexts, gauge_equivalent, identify_interaction, Direction, Groups, TOL_ADMIT,
};
use tiltid::io;
use tiltid::numeric::total_variation;

type Criterion = (&'static str, &'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn directions() -> [Direction; 2] {
    let fwd = Direction::forward(Groups::xyz());
    let swp = fwd.reversed();
    [fwd, swp]
}

fn c1a_tilt_optimality() -> Verdict {
    let mut rng = rng(101);
    let mut max_excess = f64::NEG_INFINITY;
    let mut max_attained = 0.0f64;
    for _ in 0..INSTANCES {
        let p = random_problem(&mut rng);
        let soft = p.soft_value().unwrap();
        let opt = p.solve_tilt().unwrap().optimizer;
        max_attained = max_attained.max((p.objective_value(&opt).unwrap() - soft).abs());
        for _ in 0..1000 {
            let c = random_candidate(&mut rng, p.prior());
            max_excess = max_excess.max(p.objective_value(&c).unwrap() - soft);
        }
    }
    verdict(
        max_excess <= 1e-10 && max_attained <= 1e-10,
        format!(
            "200 problems x 1000 candidates: max J(q) - soft_value = {max_excess:.3e} (tol 1e-10); |J(q*) - soft_value| <= {max_attained:.3e}"
        ),
    )
}

fn c1b_grid_oracle() -> Verdict {
    let mut rng = rng(102);
    let (mut above, mut worst_gap, mut worst_alpha) = (0usize, 0.0f64, 0.0);
    let mut bound_ok = true;
    let mut argmax_ok = true;
    let mut never_beats = true;
    for _ in 0..INSTANCES {
        let p = random_problem_of_size(&mut rng, 2);
        let soft = p.soft_value().unwrap();
        let q_star = p.solve_tilt().unwrap().optimizer.probs()[0];
        let (mut best, mut best_q) = (f64::NEG_INFINITY, 0.0);
        for k in 0..=1000 {
            let q = k as f64 / 1000.0;
            let cand = p.prior().with_probs(vec![q, 1.0 - q]).unwrap();
            let j = p.objective_value(&cand).unwrap();
            if j > best {
                best = j;
                best_q = q;
            }
        }
        let gap = soft - best;
        never_beats &= gap >= -1e-10;
        argmax_ok &= (best_q - q_star).abs() <= 1e-3;
        // KL <= chi^2 at the grid point nearest the optimizer.
        let nearest = (q_star * 1000.0).round() / 1000.0;
        let d = nearest - q_star;
        let chi2 = if d == 0.0 {
            0.0
        } else {
            d * d / (q_star * (1.0 - q_star))
        };
        bound_ok &= gap <= chi2 / p.alpha() + 1e-12;
        if gap > 1e-5 {
            above += 1;
        }
        if gap > worst_gap {
            worst_gap = gap;
            worst_alpha = p.alpha();
        }
    }
    verdict(
        above == 0 && never_beats && argmax_ok && bound_ok,
        format!(
            "{above}/200 grid gaps exceed 1e-5 (worst {worst_gap:.3e} at alpha {worst_alpha:.3}); \
             grid never beats soft_value: {never_beats}; argmax within one pitch: {argmax_ok}; \
             gaps within chi^2/alpha discretization bound: {bound_ok}"
        ),
    )
}

fn c2_kl_decomposition() -> Verdict {
    let mut rng = rng(101);
    let mut worst = 0.0f64;
    let mut count = 0usize;
    for _ in 0..INSTANCES {
        let p = random_problem(&mut rng);
        let opt = p.solve_tilt().unwrap().optimizer;
        worst = worst.max(p.kl_decomposition_residual(&opt).unwrap());
        worst = worst.max(p.kl_decomposition_residual(p.prior()).unwrap());
        count += 2;
        for _ in 0..1000 {
            let c = random_candidate(&mut rng, p.prior());
            worst = worst.max(p.kl_decomposition_residual(&c).unwrap());
            count += 1;
        }
    }
    verdict(
        worst <= 1e-10,
        format!("{count} candidates: max residual {worst:.3e} (tol 1e-10)"),
    )
}

fn c3_identification_round_trip() -> Verdict {
    let mut rng = rng(103);
    let mut worst = 0.0f64;
    let mut contexts = 0usize;
    for _ in 0..INSTANCES {
        let joint = random_joint(&mut rng);
        let terminal = random_terminal(&mut rng, &joint);
        let alpha = rand::Rng::random_range(&mut rng, 0.1..=10.0);
        let config = tiltid::soft_update::SolverConfig::new(alpha).unwrap();
        for dir in directions() {
            let ctxs = direction_contexts(&joint, &dir).unwrap().positive;
            let k = random_shift(&mut rng, ctxs.clone());
            let cal = calibrate_rewards(&joint, &dir, &terminal, alpha, Some(&k)).unwrap();
            for ctx in &ctxs {
                let q = context_problem(&joint, &dir, ctx, &cal.rewards, &terminal, config)
                    .unwrap()
                    .solve_tilt()
                    .unwrap()
                    .optimizer;
                let post = joint.conditional(dir.updated(), ctx).unwrap();
                worst = worst.max(total_variation(q.probs(), post.probs()));
                contexts += 1;
            }
        }
    }
    verdict(
        worst <= 1e-10,
        format!(
            "200 joints, {contexts} contexts (both directions): max TV {worst:.3e} (tol 1e-10)"
        ),
    )
}

fn c4_gauge_invariance() -> Verdict {
    let mut rng = rng(104);
    let (mut tv, mut shift_err, mut recover_err) = (0.0f64, 0.0f64, 0.0f64);
    let mut all_equivalent = true;
    for _ in 0..INSTANCES {
        let p = random_problem(&mut rng);
        let c = rand::Rng::random_range(&mut rng, -5.0..=5.0);
        let a = p.solve_tilt().unwrap();
        let b = p.shifted(c).unwrap().solve_tilt().unwrap();
        tv = tv.max(total_variation(a.optimizer.probs(), b.optimizer.probs()));
        shift_err = shift_err.max((b.soft_value - a.soft_value - c).abs());

        let joint = random_joint(&mut rng);
        let terminal = random_terminal(&mut rng, &joint);
        let alpha = rand::Rng::random_range(&mut rng, 0.1..=10.0);
        let dir = Direction::forward(Groups::xyz());
        let cal = calibrate_rewards(&joint, &dir, &terminal, alpha, None).unwrap();
        let shift = random_shift(&mut rng, cal.rewards.contexts());
        let (shifted, _) = apply_gauge(&cal.rewards, &cal.context_values, &shift).unwrap();
        let cmp =
            gauge_equivalent((&cal.rewards, &terminal), (&shifted, &terminal), 1e-10).unwrap();
        all_equivalent &= cmp.equivalent;
        if let Some(found) = cmp.shift {
            for (ctx, &want) in shift.shifts() {
                recover_err = recover_err.max((found.get(ctx).unwrap() - want).abs());
            }
        }
    }
    verdict(
        tv <= 1e-12 && shift_err <= 1e-12 && all_equivalent && recover_err <= 1e-12,
        format!(
            "200 pairs: optimizer TV {tv:.3e}, soft_value shift error {shift_err:.3e}, \
             recovered c error {recover_err:.3e} (tol 1e-12); all detected equivalent: {all_equivalent}"
        ),
    )
}

fn c5_pmi_properties() -> Verdict {
    let mut rng = rng(105);
    let (mut sym, mut admit) = (0.0f64, 0.0f64);
    let mut triples = 0usize;
    for _ in 0..INSTANCES {
        let joint = random_joint(&mut rng);
        for (cell, p) in joint.cells() {
            if p <= 0.0 {
                continue;
            }
            let x = cell.restrict(&["X"]);
            let y = cell.restrict(&["Y"]);
            let z = cell.restrict(&["Z"]);
            let a = joint.pmi(&x, &z, &y).unwrap();
            let b = joint.pmi(&z, &x, &y).unwrap();
            sym = sym.max((a - b).abs());
            triples += 1;
        }
        for dir in directions() {
            let t = identify_interaction(&joint, &dir).unwrap();
            admit = admit.max(check_admissibility(&t, &joint).unwrap().max_residual());
        }
    }
    verdict(
        sym <= 1e-12 && admit <= 1e-10,
        format!("{triples} triples: max symmetry gap {sym:.3e} (tol 1e-12); max admissibility residual {admit:.3e} (tol 1e-10)"),
    )
}

fn c6_commutativity() -> Verdict {
    let mut rng = rng(106);
    let delta = 1e-2;
    let (mut clean, mut others, mut hit_err) = (0.0f64, 0.0f64, 0.0f64);
    let mut coverage_ok = true;
    for _ in 0..INSTANCES {
        let joint = random_joint(&mut rng);
        let terminal = random_terminal(&mut rng, &joint);
        let alpha = rand::Rng::random_range(&mut rng, 0.1..=10.0);
        let [fwd, swp] = directions();
        let kf = random_shift(&mut rng, direction_contexts(&joint, &fwd).unwrap().positive);
        let ks = random_shift(&mut rng, direction_contexts(&joint, &swp).unwrap().positive);
        let cf = calibrate_rewards(&joint, &fwd, &terminal, alpha, Some(&kf)).unwrap();
        let cs = calibrate_rewards(&joint, &swp, &terminal, alpha, Some(&ks)).unwrap();
        let rep = commutativity_residual(
            &cf.rewards,
            &cf.context_values,
            &cs.rewards,
            &cs.context_values,
        )
        .unwrap();
        coverage_ok &= rep.residuals.len() == joint.cells().filter(|(_, p)| *p > 0.0).count();
        clean = clean.max(rep.max_residual());

        let cells: Vec<_> = cf
            .rewards
            .cells()
            .map(|((c, o), r)| (c.clone(), o.clone(), r))
            .collect();
        let (ctx, outcome, r) = cells[rand::Rng::random_range(&mut rng, 0..cells.len())].clone();
        let mut bumped = cf.rewards.clone();
        bumped
            .insert(ctx.clone(), outcome.clone(), r + delta)
            .unwrap();
        let rep =
            commutativity_residual(&bumped, &cf.context_values, &cs.rewards, &cs.context_values)
                .unwrap();
        let target = ctx.union(&outcome).unwrap();
        for (triple, &res) in &rep.residuals {
            if *triple == target {
                hit_err = hit_err.max((res - delta).abs());
            } else {
                others = others.max(res);
            }
        }
    }
    verdict(
        clean <= 1e-10 && others <= 1e-10 && hit_err <= 1e-12 && coverage_ok,
        format!(
            "200 joints: max residual {clean:.3e} (tol 1e-10); perturbed triple |res - 1e-2| <= {hit_err:.3e} (tol 1e-12); \
             other triples <= {others:.3e}; every positive triple covered: {coverage_ok}"
        ),
    )
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn c7_countable() -> Verdict {
    let cfg = TruncationConfig::new(1e-9);
    let from_file =
        io::load_countable(&std::fs::read_to_string(fixture("geometric.json")).unwrap()).unwrap();
    let built = Geometric::new(
        0.5,
        Payoff::Linear {
            slope: 1.5f64.ln(),
            intercept: 0.0,
        },
    )
    .unwrap();
    let mut geo_err = 0.0f64;
    let mut geo_finite = true;
    for fam in [&from_file, &built] {
        let (est, cert) = log_normalizer_truncated(fam, &cfg).unwrap();
        geo_finite &=
            cert.status == CertificateStatus::Finite && cert.tail_bound < 1e-9 * cert.partial;
        geo_err = geo_err.max((est - 2f64.ln()).abs());
    }
    let divergent = Geometric::new(
        0.5,
        Payoff::Linear {
            slope: 3f64.ln(),
            intercept: 0.0,
        },
    )
    .unwrap();
    let (_, dcert) = log_normalizer_truncated(&divergent, &cfg).unwrap();

    let mut rng = rng(107);
    let mut embed_err = 0.0f64;
    let mut embed_ok = true;
    for _ in 0..INSTANCES {
        let p = random_problem(&mut rng);
        let (est, cert) = log_normalizer_truncated(
            &FiniteEmbedded::from_problem(&p),
            &TruncationConfig::default(),
        )
        .unwrap();
        embed_ok &=
            cert.status == CertificateStatus::Finite && cert.n_max as usize == p.prior().len() - 1;
        embed_err = embed_err.max((est - p.alpha() * p.soft_value().unwrap()).abs());
    }
    verdict(
        geo_finite && geo_err <= 1e-9 && dcert.status == CertificateStatus::Diverged && embed_ok && embed_err <= 1e-12,
        format!(
            "geometric: certified finite {geo_finite}, |log Z - log 2| = {geo_err:.3e} (tol 1e-9); \
             slope log 3: {}; 200 finite embeddings: max error {embed_err:.3e} (tol 1e-12), certified at last index {embed_ok}",
            dcert.status.as_str()
        ),
    )
}

fn c8_f3_spot_checks() -> Verdict {
    let f3 = fixtures::noisy_copy();
    let a = |v: &str, l: &str| Assignment::from_pairs([(v, l)]).unwrap();
    let pmi = f3.pmi(&a("X", "0"), &a("Z", "0"), &a("Y", "0")).unwrap();
    let pmi_err = (pmi - 1.6f64.ln()).abs();
    let prior = f3.conditional(&["X"], &a("Y", "0")).unwrap();
    let post = construct_posterior(&prior, &[1.6f64.ln(), 0.4f64.ln()], TOL_ADMIT).unwrap();
    let post_err = (post.probs()[0] - 0.8)
        .abs()
        .max((post.probs()[1] - 0.2).abs());
    let uniform = DistVector::indexed(vec![0.5, 0.5]).unwrap();
    let post2 = construct_posterior(&uniform, &[1.6f64.ln(), 0.4f64.ln()], TOL_ADMIT).unwrap();
    let post2_err = (post2.probs()[0] - 0.8)
        .abs()
        .max((post2.probs()[1] - 0.2).abs());
    verdict(
        pmi_err <= 1e-12 && post_err <= 1e-12 && post2_err <= 1e-12,
        format!(
            "|pmi(0;0|0) - log 1.6| = {pmi_err:.3e}; posterior error {:.3e} (tol 1e-12)",
            post_err.max(post2_err)
        ),
    )
}

fn tiltid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tiltid"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn c9_cli() -> Verdict {
    let tmp = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_c9");
    std::fs::create_dir_all(&tmp).unwrap();
    let p = |n: &str| fixture(n).to_string_lossy().into_owned();
    let check = [
        "check",
        "--joint",
        &p("f3.json"),
        "--rewards",
        &p("f3_rewards_fwd.json"),
        "--rewards-swapped",
        &p("f3_rewards_swp.json"),
        "--checks",
        "gauge,admissibility,commute,decomposition",
    ];
    let first = tiltid(&check);
    let second = tiltid(&check);
    let deterministic =
        first.status.code() == Some(0) && first.stdout == second.stdout && !first.stdout.is_empty();

    let bad = tmp.join("malformed.json");
    std::fs::write(&bad, "{\"variables\": [\n  {\"name\": \"X\",, }\n]}").unwrap();
    let malformed = tiltid(&[
        "solve",
        "--joint",
        bad.to_str().unwrap(),
        "--alpha",
        "1",
        "--fill-zero",
    ]);
    let malformed_ok = malformed.status.code() == Some(2)
        && String::from_utf8_lossy(&malformed.stderr).contains("line 2");

    let zero = tmp.join("zero_mass.json");
    std::fs::write(
        &zero,
        r#"{"variables":[{"name":"X","alphabet":["0","1"]},{"name":"Y","alphabet":["0"]},{"name":"Z","alphabet":["0","1"]}],
            "mass":[{"assign":{"X":"0","Y":"0","Z":"0"},"p":0.5},{"assign":{"X":"1","Y":"0","Z":"0"},"p":0.5}]}"#,
    )
    .unwrap();
    let z = zero.to_str().unwrap();
    let zero_out = tiltid(&["solve", "--joint", z, "--alpha", "1", "--fill-zero"]);
    let zero_skip = tiltid(&[
        "solve",
        "--joint",
        z,
        "--alpha",
        "1",
        "--fill-zero",
        "--skip-zero-mass",
    ]);
    let zero_ok = zero_out.status.code() == Some(3) && zero_skip.status.code() == Some(0);

    let mut swapped: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("f3_rewards_swp.json")).unwrap())
            .unwrap();
    swapped["entries"].as_array_mut().unwrap().remove(0);
    let short = tmp.join("swapped_short.json");
    std::fs::write(&short, serde_json::to_string(&swapped).unwrap()).unwrap();
    let cov = tiltid(&[
        "check",
        "--joint",
        &p("f3.json"),
        "--rewards",
        &p("f3_rewards_fwd.json"),
        "--rewards-swapped",
        short.to_str().unwrap(),
        "--checks",
        "commute",
    ]);
    let cov_ok = cov.status.code() == Some(4);

    verdict(
        deterministic && malformed_ok && zero_ok && cov_ok,
        format!(
            "byte-identical check reports: {deterministic}; malformed JSON exit {:?}; zero-mass exit {:?} (skip flag {:?}); coverage mismatch exit {:?}",
            malformed.status.code(),
            zero_out.status.code(),
            zero_skip.status.code(),
            cov.status.code()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        (
            "C1a",
            "tilt optimality on random candidates",
            c1a_tilt_optimality,
        ),
        (
            "C1b",
            "two-outcome grid oracle at pitch 1e-3",
            c1b_grid_oracle,
        ),
        ("C2", "KL decomposition", c2_kl_decomposition),
        (
            "C3",
            "posterior-identification round trip",
            c3_identification_round_trip,
        ),
        ("C4", "gauge invariance", c4_gauge_invariance),
        ("C5", "PMI symmetry and admissibility", c5_pmi_properties),
        (
            "C6",
            "commutativity and perturbation localization",
            c6_commutativity,
        ),
        ("C7", "countable support certificates", c7_countable),
        ("C8", "F3 closed-form spot checks", c8_f3_spot_checks),
        ("C9", "CLI determinism and exit codes", c9_cli),
    ];
    let start = Instant::now();
    let mut results = BTreeMap::new();
    for (id, name, f) in criteria {
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            verdict(false, format!("panicked: {msg}"))
        });
        println!(
            "{} {id:<4} {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        results.insert(id, v.pass);
    }
    let failed: Vec<_> = results
        .iter()
        .filter(|(_, &p)| !p)
        .map(|(id, _)| *id)
        .collect();
    println!(
        "acceptance: {}/{} passed in {:.1}s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
