//! Seeded generator of SDP instances with planted reduction chains.
//!
//! Randomness comes from ChaCha8 seeded with `seed_from_u64`, so a seed pins
//! the instance across platforms.
//!
//! Layout before scrambling: one dense block holding `base_n` base indices
//! followed by the planted supports `S_1, …, S_k`, plus an optional diagonal
//! block of `diag_block` base indices.
//!
//! * The base instance is strictly feasible: `X₀ = L Lᵀ + I` on the base
//!   indices (sparse unit-bounded `L`), zero on planted indices, and every base
//!   right-hand side is `A_i • X₀`.
//! * Plant `t` is `D_t • X = 0` with `D_t = L_t L_tᵀ + shift·I` on `S_t`.
//!   For `t ≥ 2` it also couples into earlier supports through off-diagonal
//!   entries only, always including one entry into `S_{t-1}`. A zero diagonal
//!   next to a nonzero off-diagonal entry keeps the support submatrix from
//!   being definite until step `t - 1` has deleted those rows.
//! * Base constraints may also couple into planted indices; the coupling
//!   vanishes once the plants are removed.
//! * With `plant_infeasible` the last plant gets right-hand side `-1`.
//!
//! Scrambling applies a random within-block permutation, shuffles the
//! constraints and negates each with probability 1/2.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::DenseSym;
use crate::model::{BlockPermutation, BlockStructure, DenseBlockMatrix, Entry, SdpInstance, SymBlockMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Reducible,
    Infeasible,
    Feasible,
    IllConditioned,
}

impl std::str::FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "reducible" => Ok(Preset::Reducible),
            "infeasible" => Ok(Preset::Infeasible),
            "feasible" => Ok(Preset::Feasible),
            "ill-conditioned" => Ok(Preset::IllConditioned),
            _ => Err(format!("unknown preset `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub seed: u64,
    pub base_n: usize,
    pub base_m: usize,
    /// One entry per planted step; `k` is the length.
    pub support_sizes: Vec<usize>,
    pub plant_infeasible: bool,
    pub coupling_density: f64,
    pub value_scale: f64,
    /// Random entries per base constraint (before coupling).
    pub entries_per_constraint: usize,
    /// Size of an extra diagonal block in the base; 0 for none.
    pub diag_block: usize,
    /// Shift added to `L_t L_tᵀ` in the plants.
    pub pd_shift: f64,
    pub scramble: bool,
}

impl GenParams {
    pub fn k(&self) -> usize {
        self.support_sizes.len()
    }

    /// Parameters for a preset with `k` plants whose supports cycle through
    /// sizes 1, 2, 3.
    pub fn preset(preset: Preset, seed: u64, k: usize) -> Self {
        let k = if preset == Preset::Feasible { 0 } else { k };
        GenParams {
            seed,
            base_n: 8,
            base_m: 6,
            support_sizes: (0..k).map(|t| t % 3 + 1).collect(),
            plant_infeasible: preset == Preset::Infeasible,
            coupling_density: 0.3,
            value_scale: 1.0,
            entries_per_constraint: 4,
            diag_block: 2,
            pd_shift: if preset == Preset::IllConditioned { 1e-8 } else { 1.0 },
            scramble: true,
        }
    }

    fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::InvalidParams(m.to_string()));
        if self.support_sizes.contains(&0) {
            return bad("support sizes must be at least 1");
        }
        if self.plant_infeasible && self.support_sizes.is_empty() {
            return bad("an infeasible plant needs k >= 1");
        }
        if !(0.0..=1.0).contains(&self.coupling_density) {
            return bad("coupling density must lie in [0, 1]");
        }
        if !(self.value_scale > 0.0 && self.value_scale.is_finite()) {
            return bad("value scale must be positive");
        }
        if !(self.pd_shift > 0.0 && self.pd_shift.is_finite()) {
            return bad("pd shift must be positive");
        }
        if self.base_m > 0 && (self.base_n + self.diag_block == 0 || self.entries_per_constraint == 0) {
            return bad("base constraints need base indices and at least one entry each");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantSummary {
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub base_n: usize,
    pub base_m: usize,
    pub support_sizes: Vec<usize>,
    pub infeasible: bool,
    /// Indices the presolve is expected to delete (all plants for a
    /// reducible instance, all but the last for an infeasible one).
    pub expected_deleted_indices: usize,
    /// Final 1-based ids of the planted constraints, in plant order.
    pub planted_constraint_ids: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub instance: SdpInstance,
    /// Feasible point (for reducible or plant-free instances): `X₀` on the
    /// base indices and zero on planted ones, in final coordinates.
    pub witness: DenseBlockMatrix,
    pub summary: PlantSummary,
}

fn nonzero_uniform(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let mag: f64 = rng.gen_range(0.5..=1.0);
    if rng.gen_bool(0.5) {
        scale * mag
    } else {
        -scale * mag
    }
}

type Coo = BTreeMap<(usize, usize, usize), f64>;

fn coo_insert(map: &mut Coo, block: usize, i: usize, j: usize, v: f64) {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    map.insert((block, i, j), v);
}

fn coo_to_matrix(structure: &BlockStructure, map: Coo) -> SymBlockMatrix {
    SymBlockMatrix::from_entries(structure.clone(), map.into_iter().map(|((b, i, j), v)| Entry::new(b, i, j, v)))
        .expect("generated entries lie in the structure")
}

/// Random base position as `(block, local_i, local_j)`, 1-based.
fn base_position(rng: &mut ChaCha8Rng, base_n: usize, dense_block: Option<usize>, diag: Option<usize>, diag_n: usize) -> (usize, usize, usize) {
    let pick_diag = match (dense_block, diag) {
        (Some(_), Some(_)) => rng.gen_range(0..base_n + diag_n) >= base_n,
        (None, Some(_)) => true,
        _ => false,
    };
    if pick_diag {
        let i = rng.gen_range(1..=diag_n);
        (diag.unwrap(), i, i)
    } else {
        let i = rng.gen_range(1..=base_n);
        let j = rng.gen_range(1..=base_n);
        (dense_block.unwrap(), i, j)
    }
}

/// Sparse unit-bounded lower-triangular `L`, returns `L Lᵀ + I`.
fn base_witness_block(rng: &mut ChaCha8Rng, n: usize) -> DenseSym {
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        cols[i].push((i, rng.gen_range(-1.0..=1.0)));
        for _ in 0..3.min(i) {
            let k = rng.gen_range(0..i);
            if !cols[k].iter().any(|&(r, _)| r == i) {
                cols[k].push((i, rng.gen_range(-1.0..=1.0)));
            }
        }
    }
    let mut x = DenseSym::identity(n);
    for col in &cols {
        for &(r, a) in col {
            for &(s, b) in col {
                if r <= s {
                    x.add_to(r, s, a * b);
                }
            }
        }
    }
    x
}

pub fn gen_planted(p: &GenParams) -> Result<Generated, GenError> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let planted_total: usize = p.support_sizes.iter().sum();
    let dense_n = p.base_n + planted_total;

    let mut sizes = Vec::new();
    let dense_block = (dense_n > 0).then(|| {
        sizes.push(dense_n as i64);
        sizes.len()
    });
    let diag_block = (p.diag_block > 0).then(|| {
        sizes.push(-(p.diag_block as i64));
        sizes.len()
    });
    let structure = BlockStructure::new(sizes).expect("sizes are nonzero");

    // witness
    let mut blocks = Vec::new();
    if dense_block.is_some() {
        let base = base_witness_block(&mut rng, p.base_n);
        let mut full = DenseSym::zeros(dense_n);
        for i in 0..p.base_n {
            for j in i..p.base_n {
                full.set(i, j, base.get(i, j));
            }
        }
        blocks.push(full);
    }
    if diag_block.is_some() {
        let d: Vec<f64> = (0..p.diag_block).map(|_| 1.0 + rng.gen::<f64>()).collect();
        blocks.push(DenseSym::from_diagonal(&d));
    }
    let witness = DenseBlockMatrix::from_blocks(&structure, blocks).expect("witness matches structure");

    let plant_start: Vec<usize> = p
        .support_sizes
        .iter()
        .scan(p.base_n, |off, &s| {
            let start = *off;
            *off += s;
            Some(start)
        })
        .collect();

    // base constraints
    let mut constraints = Vec::with_capacity(p.base_m + p.k());
    let mut rhs = Vec::with_capacity(p.base_m + p.k());
    for _ in 0..p.base_m {
        let mut coo = Coo::new();
        for _ in 0..p.entries_per_constraint {
            let (b, i, j) = base_position(&mut rng, p.base_n, dense_block, diag_block, p.diag_block);
            coo_insert(&mut coo, b, i, j, nonzero_uniform(&mut rng, p.value_scale));
        }
        if planted_total > 0 && p.base_n > 0 && rng.gen_bool(p.coupling_density) {
            let r = rng.gen_range(1..=p.base_n);
            let s = rng.gen_range(p.base_n + 1..=dense_n);
            coo_insert(&mut coo, dense_block.unwrap(), r, s, nonzero_uniform(&mut rng, p.value_scale));
        }
        let a = coo_to_matrix(&structure, coo);
        rhs.push(a.dot(&witness).expect("same structure"));
        constraints.push(a);
    }

    // plants
    let mut planted_positions = Vec::with_capacity(p.k());
    for (t, &size) in p.support_sizes.iter().enumerate() {
        let blk = dense_block.expect("plants live in the dense block");
        let start = plant_start[t];
        let mut coo = Coo::new();
        let mut l = vec![0.0; size * size];
        for i in 0..size {
            for j in 0..=i {
                l[i * size + j] = rng.gen_range(-1.0..=1.0);
            }
        }
        for i in 0..size {
            for j in i..size {
                let mut v: f64 = (0..=i).map(|k| l[i * size + k] * l[j * size + k]).sum();
                if i == j {
                    v += p.pd_shift;
                }
                coo_insert(&mut coo, blk, start + i + 1, start + j + 1, p.value_scale * v);
            }
        }
        if t >= 1 {
            let prev = plant_start[t - 1];
            let r = prev + rng.gen_range(0..p.support_sizes[t - 1]);
            let s = start + rng.gen_range(0..size);
            coo_insert(&mut coo, blk, r + 1, s + 1, nonzero_uniform(&mut rng, p.value_scale));
            for r in p.base_n..start {
                for s in start..start + size {
                    if rng.gen_bool(p.coupling_density) {
                        coo_insert(&mut coo, blk, r + 1, s + 1, nonzero_uniform(&mut rng, p.value_scale));
                    }
                }
            }
        }
        planted_positions.push(constraints.len());
        constraints.push(coo_to_matrix(&structure, coo));
        rhs.push(if p.plant_infeasible && t + 1 == p.k() { -1.0 } else { 0.0 });
    }

    let mut objective = Coo::new();
    if structure.n() > 0 {
        for _ in 0..2 * p.entries_per_constraint.max(1) {
            let (b, i, j) = if dense_n > 0 && (diag_block.is_none() || rng.gen_bool(0.8)) {
                (dense_block.unwrap(), rng.gen_range(1..=dense_n), rng.gen_range(1..=dense_n))
            } else {
                let i = rng.gen_range(1..=p.diag_block);
                (diag_block.unwrap(), i, i)
            };
            coo_insert(&mut objective, b, i, j, nonzero_uniform(&mut rng, p.value_scale));
        }
    }
    let objective = coo_to_matrix(&structure, objective);

    let label = format!(
        "generated: seed {} base_n {} base_m {} plants {:?}{}",
        p.seed,
        p.base_n,
        p.base_m,
        p.support_sizes,
        if p.plant_infeasible { " infeasible" } else { "" }
    );
    let mut instance = SdpInstance::new(structure.clone(), objective, constraints, rhs, label).expect("consistent instance");
    let mut witness = witness;
    let mut order: Vec<usize> = (0..instance.m()).collect();

    if p.scramble {
        let maps = (1..=structure.num_blocks())
            .map(|b| {
                let mut m: Vec<usize> = (0..structure.block_dim(b)).collect();
                m.shuffle(&mut rng);
                m
            })
            .collect();
        let perm = BlockPermutation::new(&structure, maps).expect("valid permutation");
        instance = perm.apply_instance(&instance);
        witness = perm.apply_dense(&witness);

        order.shuffle(&mut rng);
        let constraints = order.iter().map(|&k| instance.constraints[k].clone()).collect();
        let rhs = order.iter().map(|&k| instance.rhs[k]).collect();
        instance.constraints = constraints;
        instance.rhs = rhs;
        for k in 0..instance.m() {
            if rng.gen_bool(0.5) {
                instance.negate_constraint(k);
            }
        }
    }

    let planted_constraint_ids = planted_positions
        .iter()
        .map(|&orig| order.iter().position(|&k| k == orig).unwrap() + 1)
        .collect();
    let expected_deleted_indices = if p.plant_infeasible {
        planted_total - p.support_sizes.last().copied().unwrap_or(0)
    } else {
        planted_total
    };
    let summary = PlantSummary {
        seed: p.seed,
        n: instance.n(),
        m: instance.m(),
        base_n: p.base_n,
        base_m: p.base_m,
        support_sizes: p.support_sizes.clone(),
        infeasible: p.plant_infeasible,
        expected_deleted_indices,
        planted_constraint_ids,
    };
    Ok(Generated { instance, witness, summary })
}

/// A strictly feasible instance with one dense `n x n` block and its interior
/// witness.
pub fn gen_strictly_feasible(seed: u64, n: usize, m: usize) -> Result<(SdpInstance, DenseBlockMatrix), GenError> {
    let p = GenParams {
        seed,
        base_n: n,
        base_m: m,
        support_sizes: Vec::new(),
        plant_infeasible: false,
        coupling_density: 0.0,
        value_scale: 1.0,
        entries_per_constraint: 4,
        diag_block: 0,
        pd_shift: 1.0,
        scramble: true,
    };
    let g = gen_planted(&p)?;
    Ok((g.instance, g.witness))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduce::{preprocess, Outcome, Tolerances};
    use crate::sdpa::write_instance;

    #[test]
    fn strictly_feasible_witness() {
        for seed in 0..10 {
            let (inst, x0) = gen_strictly_feasible(seed, 6, 5).unwrap();
            for (r, b) in inst.residuals(&x0).unwrap().iter().zip(&inst.rhs) {
                assert!(r.abs() <= 1e-12 * (1.0 + b.abs()));
            }
            assert!(x0.lambda_min_lower(1e-10) >= 1.0 - 1e-9);
            assert_eq!(preprocess(&inst, &Tolerances::default(), None).outcome(), Outcome::Unchanged);
        }
        let (inst, _) = gen_strictly_feasible(3, 4, 0).unwrap();
        assert_eq!(inst.m(), 0);
    }

    #[test]
    fn deterministic_in_seed() {
        let p = GenParams::preset(Preset::Reducible, 42, 3);
        let a = write_instance(&gen_planted(&p).unwrap().instance);
        let b = write_instance(&gen_planted(&p).unwrap().instance);
        assert_eq!(a, b);
        let q = GenParams { seed: 43, ..p };
        assert_ne!(a, write_instance(&gen_planted(&q).unwrap().instance));
    }

    #[test]
    fn single_plant_archetype() {
        let p = GenParams {
            seed: 1,
            base_n: 2,
            base_m: 1,
            support_sizes: vec![1],
            plant_infeasible: false,
            coupling_density: 1.0,
            value_scale: 1.0,
            entries_per_constraint: 2,
            diag_block: 0,
            pd_shift: 1.0,
            scramble: false,
        };
        let g = gen_planted(&p).unwrap();
        assert_eq!(g.summary.planted_constraint_ids, vec![2]);
        let plant = &g.instance.constraints[1];
        assert_eq!(plant.nnz(), 1);
        assert!(plant.get(1, 3, 3) > 0.0);
        let v = preprocess(&g.instance, &Tolerances::default(), None);
        assert_eq!(v.outcome(), Outcome::Reduced);
        assert_eq!(v.final_dims(), (2, 1));
    }

    #[test]
    fn infeasible_plants_need_two_steps() {
        for seed in 0..20 {
            let g = gen_planted(&GenParams::preset(Preset::Infeasible, seed, 2)).unwrap();
            let v = preprocess(&g.instance, &Tolerances::default(), None);
            assert_eq!(v.outcome(), Outcome::Infeasible, "seed {seed}");
            assert!(v.certificate().steps.len() >= 2);
        }
    }

    #[test]
    fn ill_conditioned_plants_still_reduce() {
        for seed in 0..20 {
            let g = gen_planted(&GenParams::preset(Preset::IllConditioned, seed, 3)).unwrap();
            let v = preprocess(&g.instance, &Tolerances::default(), None);
            assert_eq!(v.outcome(), Outcome::Reduced, "seed {seed}");
        }
    }

    #[test]
    fn parameter_validation() {
        let mut p = GenParams::preset(Preset::Reducible, 0, 2);
        p.support_sizes[0] = 0;
        assert!(gen_planted(&p).is_err());
        let mut p = GenParams::preset(Preset::Infeasible, 0, 0);
        p.plant_infeasible = true;
        assert!(gen_planted(&p).is_err());
        let mut p = GenParams::preset(Preset::Reducible, 0, 2);
        p.coupling_density = 1.5;
        assert!(gen_planted(&p).is_err());
    }
}
