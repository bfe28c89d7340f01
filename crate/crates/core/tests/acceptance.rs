//! Acceptance gate. Prints one `[PASS]`/`[FAIL]` line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdp_presolve::gen::{gen_planted, GenParams, Generated, Preset};
use sdp_presolve::lift::{lift_solution, restrict_solution, verify_certificate};
use sdp_presolve::linalg::{is_pd, lambda_min_lower, DenseSym};
use sdp_presolve::model::{BlockPermutation, BlockStructure, SdpInstance, Support};
use sdp_presolve::reduce::{preprocess, Outcome, ReductionCertificate, StepAction, Tolerances};
use sdp_presolve::sdpa::{parse_instance_str, write_instance, SdpaError};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

const EXAMPLE_ONE: &str = "\"two constraints, one 3x3 block\n2\n1\n3\n0 -1\n1 1 1 1 1.0\n2 1 1 3 1.0\n2 1 2 2 1.0\n";

fn generate(preset: Preset, seed: u64, k: usize) -> Generated {
    gen_planted(&GenParams::preset(preset, seed, k)).expect("valid preset")
}

fn example_one() -> Check {
    let inst = parse_instance_str(EXAMPLE_ONE).map_err(|e| e.to_string())?;
    let tol = Tolerances::default();
    let start = Instant::now();
    let v = preprocess(&inst, &tol, None);
    let elapsed = start.elapsed();
    let cert = v.certificate();
    ensure!(v.outcome() == Outcome::Infeasible, "verdict {:?}", v.outcome());
    ensure!(cert.steps.len() == 2, "{} steps", cert.steps.len());
    let (s1, s2) = (&cert.steps[0], &cert.steps[1]);
    ensure!(s1.constraint_id == 1 && s1.action == StepAction::DeleteConstraint, "step 1 {s1:?}");
    ensure!(s1.support_original.flats() == vec![0], "step 1 support {:?}", s1.support_original.flats());
    ensure!(s2.constraint_id == 2 && s2.action == StepAction::DeclareInfeasible, "step 2 {s2:?}");
    ensure!(s2.rhs_at_step == -1.0, "step 2 rhs {}", s2.rhs_at_step);
    ensure!(elapsed < Duration::from_millis(10), "took {elapsed:?}");
    Ok(format!("infeasible in 2 steps, {elapsed:?}"))
}

fn run_reduce_exit(dir: &tempfile::TempDir, name: &str, inst: &SdpInstance) -> Result<i32, String> {
    let path = dir.path().join(name);
    std::fs::write(&path, write_instance(inst)).map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_sdp-presolve"))
        .arg("reduce")
        .arg("--in")
        .arg(&path)
        .output()
        .map_err(|e| e.to_string())?;
    out.status.code().ok_or_else(|| "killed by signal".to_string())
}

fn planted_recovery() -> Check {
    let tol = Tolerances::default();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = 0;
    for seed in 0..100 {
        for k in [1, 3, 5] {
            let g = generate(Preset::Reducible, seed, k);
            let v = preprocess(&g.instance, &tol, None);
            ensure!(v.outcome() == Outcome::Reduced, "reducible seed {seed} k {k}: {:?}", v.outcome());
            let deleted = g.instance.n() - v.final_dims().0;
            let planted: usize = g.summary.support_sizes.iter().sum();
            ensure!(deleted >= planted, "seed {seed} k {k}: deleted {deleted} < planted {planted}");
            let removed: Vec<usize> = v.certificate().steps.iter().map(|s| s.constraint_id).collect();
            for id in &g.summary.planted_constraint_ids {
                ensure!(removed.contains(id), "seed {seed} k {k}: plant {id} not removed");
            }
            runs += 1;
        }
        for k in [2, 4] {
            let g = generate(Preset::Infeasible, seed, k);
            let v = preprocess(&g.instance, &tol, None);
            ensure!(v.outcome() == Outcome::Infeasible, "infeasible seed {seed} k {k}: {:?}", v.outcome());
            let code = run_reduce_exit(&dir, &format!("inf-{seed}-{k}.dat-s"), &g.instance)?;
            ensure!(code == 2, "infeasible seed {seed} k {k}: exit {code}");
            runs += 1;
        }
    }
    Ok(format!("{runs}/{runs} verdicts match the plant"))
}

fn soundness() -> Check {
    let tol = Tolerances::default();
    let mut worst_res: f64 = 0.0;
    let mut worst_lam = f64::INFINITY;
    for seed in 0..100 {
        let g = generate(Preset::Reducible, seed, [1, 3, 5][seed as usize % 3]);
        let v = preprocess(&g.instance, &tol, None);
        let (reduced, cert) = match (v.reduced(), v.certificate()) {
            (Some(r), c) => (r, c),
            _ => return Err(format!("seed {seed}: not reduced")),
        };
        let x_red = restrict_solution(&g.witness, cert).map_err(|e| e.to_string())?;
        let lifted = lift_solution(&x_red, cert).map_err(|e| e.to_string())?;
        let res = g.instance.residuals(&lifted).map_err(|e| e.to_string())?;
        for (i, (r, b)) in res.iter().zip(&g.instance.rhs).enumerate() {
            let bound = 1e-9 * (1.0 + b.abs());
            ensure!(r.abs() <= bound, "seed {seed} constraint {}: residual {r:e}", i + 1);
            worst_res = worst_res.max(r.abs() / (1.0 + b.abs()));
        }
        let lam = lifted.lambda_min_lower(1e-12);
        ensure!(lam >= -1e-9, "seed {seed}: lambda_min {lam:e}");
        worst_lam = worst_lam.min(lam);
        let c_orig = g.instance.objective.dot(&lifted).map_err(|e| e.to_string())?;
        let c_red = reduced.objective.dot(&x_red).map_err(|e| e.to_string())?;
        let rel = (c_orig - c_red).abs() / c_orig.abs().max(c_red.abs()).max(1.0);
        ensure!(rel <= 1e-12, "seed {seed}: objective {c_orig} vs {c_red}");
    }
    Ok(format!("worst relative residual {worst_res:.1e}, min lambda {worst_lam:.3e}"))
}

fn equivariance() -> Check {
    let tol = Tolerances::default();
    for seed in 0..50u64 {
        let preset = [Preset::Reducible, Preset::Infeasible, Preset::Feasible][seed as usize % 3];
        let g = generate(preset, seed, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let s = &g.instance.structure;
        let maps = (1..=s.num_blocks())
            .map(|b| {
                let mut m: Vec<usize> = (0..s.block_dim(b)).collect();
                rand::seq::SliceRandom::shuffle(m.as_mut_slice(), &mut rng);
                m
            })
            .collect();
        let perm = BlockPermutation::new(s, maps).map_err(|e| e.to_string())?;
        let mut other = perm.apply_instance(&g.instance);
        for i in 0..other.m() {
            if rng.gen_bool(0.5) {
                other.negate_constraint(i);
            }
        }
        let a = preprocess(&g.instance, &tol, None);
        let b = preprocess(&other, &tol, None);
        ensure!(a.outcome() == b.outcome(), "seed {seed}: {:?} vs {:?}", a.outcome(), b.outcome());
        ensure!(a.final_dims() == b.final_dims(), "seed {seed}: {:?} vs {:?}", a.final_dims(), b.final_dims());
    }
    Ok("50/50 seeds agree".into())
}

fn idempotence() -> Check {
    let tol = Tolerances::default();
    let mut corpus: Vec<SdpInstance> = vec![parse_instance_str(EXAMPLE_ONE).unwrap()];
    for seed in 0..100 {
        corpus.push(generate(Preset::Reducible, seed, 1 + seed as usize % 5).instance);
        corpus.push(generate(Preset::Infeasible, seed, 2).instance);
        corpus.push(generate(Preset::Feasible, seed, 0).instance);
        corpus.push(generate(Preset::IllConditioned, seed, 3).instance);
    }
    let mut reduced = 0;
    for (i, inst) in corpus.iter().enumerate() {
        let v = preprocess(inst, &tol, None);
        let out = match v.outcome() {
            Outcome::Infeasible => continue,
            Outcome::Reduced => {
                reduced += 1;
                v.reduced().unwrap().clone()
            }
            Outcome::Unchanged => inst.clone(),
        };
        let again = preprocess(&out, &tol, None);
        ensure!(again.outcome() == Outcome::Unchanged, "corpus item {i}: second pass {:?}", again.outcome());
    }
    Ok(format!("{} instances, {reduced} reduced, all fixed points", corpus.len()))
}

/// Determinant by the Leibniz expansion.
fn det_leibniz(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    permute(&mut perm, 0, &mut |p| {
        let mut inv = 0;
        for i in 0..n {
            for j in i + 1..n {
                if p[i] > p[j] {
                    inv += 1;
                }
            }
        }
        let prod: f64 = (0..n).map(|i| a[i][p[i]]).product();
        total += if inv % 2 == 0 { prod } else { -prod };
    });
    total
}

fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}

fn leading_minors(a: &[Vec<f64>]) -> Vec<f64> {
    (1..=a.len()).map(|k| det_leibniz(&a[..k].iter().map(|r| r[..k].to_vec()).collect::<Vec<_>>())).collect()
}

/// Smallest root of the characteristic polynomial, closed form.
fn eig_min_closed(a: &[Vec<f64>]) -> f64 {
    match a.len() {
        2 => {
            let (p, q, r) = (a[0][0], a[0][1], a[1][1]);
            (p + r) / 2.0 - (((p - r) / 2.0).powi(2) + q * q).sqrt()
        }
        3 => {
            // trigonometric solution of the depressed cubic
            let tr = a[0][0] + a[1][1] + a[2][2];
            let m = tr / 3.0;
            let b: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| a[i][j] - if i == j { m } else { 0.0 }).collect()).collect();
            let p2: f64 = b.iter().flatten().map(|x| x * x).sum::<f64>() / 6.0;
            let p = p2.sqrt();
            if p == 0.0 {
                return m;
            }
            let c: Vec<Vec<f64>> = b.iter().map(|r| r.iter().map(|x| x / p).collect()).collect();
            let half_det = (det_leibniz(&c) / 2.0).clamp(-1.0, 1.0);
            let phi = half_det.acos() / 3.0;
            m + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos()
        }
        _ => unreachable!(),
    }
}

fn linalg_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut accepted = 0;
    let mut pd_count = 0;
    while accepted < 1000 {
        let shift: f64 = rng.gen_range(-1.0..4.0);
        let mut a = vec![vec![0.0; 6]; 6];
        for i in 0..6 {
            for j in i..6 {
                let v: f64 = rng.gen_range(-1.0..1.0);
                a[i][j] = v + if i == j { shift } else { 0.0 };
                a[j][i] = a[i][j];
            }
        }
        let minors = leading_minors(&a);
        if minors.iter().any(|d| d.abs() < 1e-6) {
            continue;
        }
        accepted += 1;
        let oracle = minors.iter().all(|&d| d > 0.0);
        let m = DenseSym::from_rows(&a).map_err(|e| e.to_string())?;
        let got = is_pd(&m, 0.0).map_err(|e| e.to_string())?;
        ensure!(got == oracle, "matrix {accepted}: is_pd {got}, minors {minors:?}");
        pd_count += oracle as usize;
    }

    let mut cases: Vec<Vec<Vec<f64>>> = vec![
        vec![vec![2.0, 1.0], vec![1.0, 2.0]],
        vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        vec![vec![4.0, -2.0], vec![-2.0, 1.0]],
        vec![vec![1e-3, 0.0], vec![0.0, 5.0]],
        vec![vec![2.0, -1.0, 0.0], vec![-1.0, 2.0, -1.0], vec![0.0, -1.0, 2.0]],
        vec![vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 5.0], vec![3.0, 5.0, 6.0]],
        vec![vec![3.0, 0.0, 0.0], vec![0.0, -1.0, 0.0], vec![0.0, 0.0, 2.0]],
        vec![vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0]],
    ];
    for _ in 0..40 {
        let n = rng.gen_range(2..=3);
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                a[i][j] = rng.gen_range(-3.0..3.0);
                a[j][i] = a[i][j];
            }
        }
        cases.push(a);
    }
    let mut worst: f64 = 0.0;
    for (k, a) in cases.iter().enumerate() {
        let m = DenseSym::from_rows(a).map_err(|e| e.to_string())?;
        let got = lambda_min_lower(&m, 1e-10);
        let want = eig_min_closed(a);
        ensure!((got - want).abs() <= 1e-8, "case {k}: lambda_min_lower {got}, oracle {want}");
        worst = worst.max((got - want).abs());
    }
    Ok(format!("1000 matrices ({pd_count} PD) agree; {} eigenvalue cases within {worst:.1e}", cases.len()))
}

type EntryKey = (usize, usize, usize, usize, u64);

/// Entry multiset read straight from the text, normalized to `i <= j`.
fn raw_entries(text: &str, header_lines: usize) -> BTreeMap<EntryKey, usize> {
    let mut out = BTreeMap::new();
    let body = text.lines().filter(|l| !l.trim_start().starts_with(['"', '*']) && !l.trim().is_empty());
    for line in body.skip(header_lines) {
        let t: Vec<&str> = line.split(|c: char| c.is_whitespace() || ",(){}".contains(c)).filter(|s| !s.is_empty()).collect();
        let v: f64 = t[4].replace(['D', 'd'], "e").parse().unwrap();
        if v == 0.0 {
            continue;
        }
        let (i, j): (usize, usize) = (t[2].parse().unwrap(), t[3].parse().unwrap());
        let key = (t[0].parse().unwrap(), t[1].parse().unwrap(), i.min(j), i.max(j), v.to_bits());
        *out.entry(key).or_insert(0) += 1;
    }
    out
}

fn parser_round_trip() -> Check {
    for seed in 0..200u64 {
        let preset = [Preset::Reducible, Preset::Infeasible, Preset::Feasible, Preset::IllConditioned][seed as usize % 4];
        let mut p = GenParams::preset(preset, seed, 1 + seed as usize % 4);
        p.value_scale = [1.0, 1e-7, 3.5e12, 0.1][seed as usize % 4];
        let inst = gen_planted(&p).map_err(|e| e.to_string())?.instance;
        let text = write_instance(&inst);
        let back = parse_instance_str(&text).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure!(back == inst, "seed {seed}: parse(write(inst)) differs");
    }

    let fixtures: [(&str, usize); 4] = [
        (EXAMPLE_ONE, 4),
        ("* comment\n\"title\n2 =mdim\n2 =nblocks\n{2, -3}\n1.5 -2\n0 1 1 2 -0.25\n1 1 2 1 5.0\n1 2 3 3 1D-3\n2 2 1 1 0\n2 1 2 2 7e20\n", 4),
        ("1\n1\n(3)\n(1.0)\n0 1 1 1 1\n0 1 1 3 -1\n1 1 3 3 2.5\n1 1 2 3 1.0e-12\n", 4),
        ("3\n2\n2 -1\n1 2 3\n1 2 1 1 1\n2 1 2 1 -4\n3 1 1 1 0.1\n3 1 2 2 0.2\n", 4),
    ];
    for (k, (text, header)) in fixtures.iter().enumerate() {
        let inst = parse_instance_str(text).map_err(|e| format!("fixture {k}: {e}"))?;
        let written = write_instance(&inst);
        ensure!(raw_entries(text, *header) == raw_entries(&written, 4), "fixture {k}: entry multiset changed");
    }

    let bad: [(&str, usize, fn(&SdpaError) -> bool); 9] = [
        ("1\n1\n2\n1\n1 1 1 1 1\n1 1 1 1 2\n", 6, |e| matches!(e, SdpaError::DuplicateEntry { .. })),
        ("1\n1\n2\n1\n1 1 2 1 1\n1 1 1 2 2\n", 6, |e| matches!(e, SdpaError::DuplicateEntry { .. })),
        ("1\n1\n2\n1\n1 1 3 1 1\n", 5, |e| matches!(e, SdpaError::BadIndex { .. })),
        ("1\n1\n2\n1\n\"c\n1 2 1 1 1\n", 6, |e| matches!(e, SdpaError::BadIndex { .. })),
        ("1\n1\n2\n1\n1 1 0 1 1\n", 5, |e| matches!(e, SdpaError::BadIndex { .. })),
        ("1\n1\n2\n1\n2 1 1 1 1\n", 5, |e| matches!(e, SdpaError::BadMatno { .. })),
        ("1\n1\n-2\n1\n1 1 1 2 1\n", 5, |e| matches!(e, SdpaError::BadDiagonalBlockEntry { .. })),
        ("1\n1\n2\nx\n", 4, |e| matches!(e, SdpaError::ParseError { .. })),
        ("1\n1\n2\n1\n1 1 1 1 1.0.0\n", 5, |e| matches!(e, SdpaError::ParseError { .. })),
    ];
    for (k, (text, line, kind)) in bad.iter().enumerate() {
        match parse_instance_str(text) {
            Ok(_) => return Err(format!("malformation {k} accepted")),
            Err(e) => {
                ensure!(kind(&e), "malformation {k}: wrong error {e}");
                ensure!(e.line() == Some(*line), "malformation {k}: line {:?}, expected {line}", e.line());
            }
        }
    }
    Ok(format!("200 round trips, {} fixtures, {} malformations", fixtures.len(), bad.len()))
}

/// Structure the replay sees when it reaches step `s` (0-based).
fn structure_before_step(cert: &ReductionCertificate, s: usize) -> Result<BlockStructure, String> {
    let mut removed: Vec<_> = cert.steps[..s]
        .iter()
        .filter(|st| st.action == StepAction::DeleteConstraint)
        .flat_map(|st| st.support_original.iter().copied())
        .collect();
    removed.sort();
    let shrink = cert.original_structure.shrink(&Support::from(removed)).map_err(|e| e.to_string())?;
    Ok(shrink.new)
}

fn certificates() -> Check {
    let tol = Tolerances::default();
    let mut emitted: Vec<(SdpInstance, ReductionCertificate)> = vec![];
    let ex = parse_instance_str(EXAMPLE_ONE).unwrap();
    emitted.push((ex.clone(), preprocess(&ex, &tol, None).certificate().clone()));
    for seed in 0..100 {
        for (preset, k) in [(Preset::Reducible, 3), (Preset::Infeasible, 2), (Preset::Feasible, 0), (Preset::IllConditioned, 4)] {
            let g = generate(preset, seed, k);
            let cert = preprocess(&g.instance, &tol, None).certificate().clone();
            emitted.push((g.instance, cert));
        }
    }
    for (k, (inst, cert)) in emitted.iter().enumerate() {
        let r = verify_certificate(inst, cert, &tol);
        ensure!(r.ok, "certificate {k} rejected: {:?}", r.diagnostics);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut tamper_counts = [0usize; 5];
    for (inst, cert) in emitted.iter().filter(|(_, c)| c.steps.len() >= 2) {
        let mut tampered: Vec<(usize, ReductionCertificate)> = Vec::new();

        let mut c = cert.clone();
        let s = rng.gen_range(0..c.steps.len());
        let structure = structure_before_step(cert, s)?;
        let mut flats = c.steps[s].support.flats();
        let flip = rng.gen_range(0..structure.n());
        match flats.binary_search(&flip) {
            Ok(p) if flats.len() > 1 => {
                flats.remove(p);
            }
            Ok(_) => flats.push((flip + 1) % structure.n()),
            Err(p) => flats.insert(p, flip),
        }
        flats.sort();
        flats.dedup();
        c.steps[s].support = Support::from_flats(&structure, &flats).map_err(|e| e.to_string())?;
        tampered.push((0, c));

        let mut c = cert.clone();
        let s = rng.gen_range(0..c.steps.len());
        c.steps[s].sign = c.steps[s].sign.flipped();
        tampered.push((1, c));

        let mut c = cert.clone();
        let s = rng.gen_range(0..c.steps.len());
        let cur = c.steps[s].constraint_id;
        c.steps[s].constraint_id = if cur == inst.m() { 1 } else { cur + 1 };
        tampered.push((2, c));

        let mut c = cert.clone();
        let s = rng.gen_range(0..c.steps.len());
        c.steps[s].action = match c.steps[s].action {
            StepAction::DeleteConstraint => StepAction::DeclareInfeasible,
            StepAction::DeclareInfeasible => StepAction::DeleteConstraint,
        };
        tampered.push((3, c));

        let mut c = cert.clone();
        c.steps.swap(0, 1);
        tampered.push((4, c));

        for (class, t) in tampered {
            let r = verify_certificate(inst, &t, &tol);
            ensure!(!r.ok, "tamper class {class} accepted for certificate with {} steps", cert.steps.len());
            tamper_counts[class] += 1;
        }
    }
    ensure!(tamper_counts.iter().all(|&c| c > 0), "a tamper class was never exercised: {tamper_counts:?}");
    Ok(format!("{} certificates replay; tampers rejected per class {tamper_counts:?}", emitted.len()))
}

fn scale() -> Check {
    let p = GenParams {
        seed: 500,
        base_n: 460,
        base_m: 980,
        support_sizes: vec![2; 20],
        plant_infeasible: false,
        coupling_density: 0.3,
        value_scale: 1.0,
        entries_per_constraint: 4,
        diag_block: 0,
        pd_shift: 1.0,
        scramble: true,
    };
    let g = gen_planted(&p).map_err(|e| e.to_string())?;
    ensure!(g.instance.n() == 500 && g.instance.m() == 1000, "size {} x {}", g.instance.n(), g.instance.m());
    let start = Instant::now();
    let v = preprocess(&g.instance, &Tolerances::default(), None);
    let elapsed = start.elapsed();
    ensure!(v.outcome() == Outcome::Reduced, "verdict {:?}", v.outcome());
    ensure!(v.certificate().steps.len() >= 20, "{} steps", v.certificate().steps.len());
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("n 500, m 1000, {} steps in {elapsed:?}", v.certificate().steps.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("example 1 golden", example_one),
        ("planted recovery", planted_recovery),
        ("soundness", soundness),
        ("equivariance", equivariance),
        ("idempotence", idempotence),
        ("linalg oracle agreement", linalg_oracle),
        ("parser round trip", parser_round_trip),
        ("certificate verification", certificates),
        ("scale smoke test", scale),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
