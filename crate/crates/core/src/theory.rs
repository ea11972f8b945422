//! Numeric verification of the optimal-discriminator and generator-optimum
//! claims on small discrete sample spaces. Plain `f64`, no networks.

use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config, dimension, Error, Result};
use crate::objectives::{kl_divergence, Anchors};

/// A finite sample space with data and generator distributions and a pair
/// of anchors over K outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteWorld {
    pub p_data: Vec<f64>,
    pub p_g: Vec<f64>,
    pub r1: Vec<f64>,
    pub r0: Vec<f64>,
}

fn check_distribution(name: &str, p: &[f64]) -> Result<()> {
    if p.is_empty() || p.iter().any(|&v| !(v >= 0.0)) {
        return Err(config(format!("{name} must be nonempty and nonnegative")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(config(format!("{name} sums to {s}")));
    }
    Ok(())
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

impl DiscreteWorld {
    pub fn new(p_data: Vec<f64>, p_g: Vec<f64>, r1: Vec<f64>, r0: Vec<f64>) -> Result<Self> {
        check_distribution("p_data", &p_data)?;
        check_distribution("p_g", &p_g)?;
        check_distribution("R1", &r1)?;
        check_distribution("R0", &r0)?;
        if p_data.len() != p_g.len() || r1.len() != r0.len() {
            return Err(dimension("world distributions disagree in length"));
        }
        Ok(Self { p_data, p_g, r1, r0 })
    }

    pub fn with_anchors(p_data: Vec<f64>, p_g: Vec<f64>, anchors: &Anchors) -> Result<Self> {
        Self::new(p_data, p_g, anchors.real.probs.clone(), anchors.fake.probs.clone())
    }

    /// Random strictly positive distributions; anchors drawn independently.
    pub fn random(seed: u64, n_x: usize, k: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| normalized((0..n).map(|_| rng.random_range(0.05..1.0)).collect());
        let p_data = draw(n_x);
        let p_g = draw(n_x);
        let r1 = draw(k);
        let r0 = draw(k);
        Self { p_data, p_g, r1, r0 }
    }

    pub fn n_x(&self) -> usize {
        self.p_data.len()
    }

    pub fn outcomes(&self) -> usize {
        self.r1.len()
    }

    pub fn anchors_distinct(&self) -> bool {
        self.r1.iter().zip(&self.r0).any(|(a, b)| a != b)
    }

    fn masses(&self, x: usize) -> Result<(f64, f64)> {
        let (pd, pg) = (self.p_data[x], self.p_g[x]);
        if pd + pg <= 0.0 {
            return Err(Error::UndefinedPoint(x));
        }
        Ok((pd, pg))
    }
}

/// `b + (a - b) t`, so that `t = 1/2` reproduces the midpoint bit for bit.
fn mix(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&a, &b)| b + (a - b) * t).collect()
}

/// Both forms at one sample point.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedForm {
    /// The optimal-discriminator formula taken literally:
    /// `p_d/(p_d+p_g) + (R1 p_d + R0 p_g)/(p_d+p_g)`.
    pub literal: Vec<f64>,
    /// The anchor mixture `M = (R1 p_d + R0 p_g)/(p_d+p_g)`.
    pub mixture: Vec<f64>,
}

pub fn optimal_d_closed_form(world: &DiscreteWorld, x: usize) -> Result<ClosedForm> {
    let (pd, pg) = world.masses(x)?;
    let t = pd / (pd + pg);
    let mixture = mix(&world.r1, &world.r0, t);
    let literal = mixture.iter().map(|m| t + m).collect();
    Ok(ClosedForm { literal, mixture })
}

/// The proof density `p_x(v) = (p_d (R1(v) + 1) + p_g R0(v)) / (p_d + p_g)`,
/// unnormalized (it sums to `1 + K p_d/(p_d+p_g)`, not 1).
pub fn proof_px(world: &DiscreteWorld, x: usize) -> Result<Vec<f64>> {
    let (pd, pg) = world.masses(x)?;
    Ok(world
        .r1
        .iter()
        .zip(&world.r0)
        .map(|(r1, r0)| (pd * (r1 + 1.0) + pg * r0) / (pd + pg))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectiveVariant {
    /// `p_d KL(R1 || d) + p_g KL(R0 || d)`.
    KlOnly,
    /// The same with the proof's `(R1 + 1)` weighting on the data term.
    KlPlusScalar,
}

impl fmt::Display for ObjectiveVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveVariant::KlOnly => "kl_only",
            ObjectiveVariant::KlPlusScalar => "kl_plus_scalar",
        })
    }
}

/// Projected-gradient settings.
#[derive(Debug, Clone, Copy)]
pub struct SimplexSolver {
    pub step: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Lower bound kept on every coordinate so the logarithms stay finite.
    pub floor: f64,
}

impl Default for SimplexSolver {
    fn default() -> Self {
        Self {
            step: 1e-2,
            max_iterations: 100_000,
            tolerance: 1e-10,
            floor: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericOptimum {
    pub d: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Euclidean projection onto `{d : sum d = 1, d >= floor}`.
pub fn project_simplex(y: &[f64], floor: f64) -> Vec<f64> {
    let k = y.len();
    let budget = 1.0 - floor * k as f64;
    let z: Vec<f64> = y.iter().map(|v| v - floor).collect();
    let mut u = z.clone();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - budget) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    z.iter().map(|v| (v - theta).max(0.0) + floor).collect()
}

impl SimplexSolver {
    /// Minimizes `-sum_v w_v ln d_v` over the simplex (every KL objective
    /// here has that form up to a constant) by projected gradient descent
    /// with Armijo backtracking from `step`.
    pub fn minimize_cross_entropy(&self, w: &[f64]) -> Result<NumericOptimum> {
        let k = w.len();
        // f(p) - f(d) = -sum w ln(p/d), kept accurate near the optimum where
        // the raw objective values agree to the last bit
        let delta = |p: &[f64], d: &[f64]| -> f64 {
            -w.iter().zip(p.iter().zip(d)).map(|(w, (p, d))| w * ((p - d) / d).ln_1p()).sum::<f64>()
        };
        let mut d = vec![1.0 / k as f64; k];
        let mut grad_norm = f64::INFINITY;
        for it in 0..self.max_iterations {
            let g: Vec<f64> = w.iter().zip(&d).map(|(w, d)| -w / d).collect();
            // stationarity: the gradient mapping at the nominal step
            let probe: Vec<f64> = d.iter().zip(&g).map(|(d, g)| d - self.step * g).collect();
            grad_norm = project_simplex(&probe, self.floor)
                .iter()
                .zip(&d)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                / self.step;
            if grad_norm < self.tolerance {
                return Ok(NumericOptimum {
                    d,
                    iterations: it,
                    grad_norm,
                });
            }
            let mut eta = self.step;
            d = loop {
                let y: Vec<f64> = d.iter().zip(&g).map(|(d, g)| d - eta * g).collect();
                let p = project_simplex(&y, self.floor);
                let linear: f64 = g.iter().zip(p.iter().zip(&d)).map(|(g, (p, d))| g * (p - d)).sum();
                let dist2: f64 = p.iter().zip(&d).map(|(p, d)| (p - d) * (p - d)).sum();
                if delta(&p, &d) <= linear + dist2 / (2.0 * eta) || eta < self.step * 1e-30 {
                    break p;
                }
                eta *= 0.5;
            };
        }
        Err(Error::NonConvergence {
            iterations: self.max_iterations,
            grad_norm,
        })
    }
}

fn variant_weights(world: &DiscreteWorld, x: usize, variant: ObjectiveVariant) -> Result<Vec<f64>> {
    let (pd, pg) = world.masses(x)?;
    let bump = match variant {
        ObjectiveVariant::KlOnly => 0.0,
        ObjectiveVariant::KlPlusScalar => 1.0,
    };
    Ok(world
        .r1
        .iter()
        .zip(&world.r0)
        .map(|(r1, r0)| pd * (r1 + bump) + pg * r0)
        .collect())
}

pub fn optimal_d_numeric(world: &DiscreteWorld, x: usize, variant: ObjectiveVariant) -> Result<NumericOptimum> {
    optimal_d_numeric_with(world, x, variant, &SimplexSolver::default())
}

pub fn optimal_d_numeric_with(
    world: &DiscreteWorld,
    x: usize,
    variant: ObjectiveVariant,
    solver: &SimplexSolver,
) -> Result<NumericOptimum> {
    solver.minimize_cross_entropy(&variant_weights(world, x, variant)?)
}

/// `sum_x p_d [KL(R1||D(x)) + ln s(x)] + sum_x p_g [KL(R0||D(x)) + ln(1 - s(x))]`.
pub fn value_function_eval(world: &DiscreteWorld, d: &[Vec<f64>], s: &[f64]) -> Result<f64> {
    if d.len() != world.n_x() || s.len() != world.n_x() {
        return Err(dimension("one perspective and one scalar per sample point"));
    }
    let mut v = 0.0;
    for x in 0..world.n_x() {
        if !(s[x] > 0.0 && s[x] < 1.0) {
            return Err(Error::Divergence(format!("log of scalar {} at x = {x}", s[x])));
        }
        if world.p_data[x] > 0.0 {
            v += world.p_data[x] * (kl_divergence(&world.r1, &d[x])? + s[x].ln());
        }
        if world.p_g[x] > 0.0 {
            v += world.p_g[x] * (kl_divergence(&world.r0, &d[x])? + (1.0 - s[x]).ln());
        }
    }
    Ok(v)
}

/// `C(p_g) = sum_x (p_d + p_g) KL(M(x) || (R1 + R0)/2)`, the generator
/// criterion with the KL-only optimal discriminator plugged in.
pub fn generator_criterion(world: &DiscreteWorld) -> Result<f64> {
    let mid = mix(&world.r1, &world.r0, 0.5);
    let mut c = 0.0;
    for x in 0..world.n_x() {
        let (pd, pg) = (world.p_data[x], world.p_g[x]);
        if pd + pg <= 0.0 {
            continue;
        }
        let m = optimal_d_closed_form(world, x)?.mixture;
        c += (pd + pg) * kl_divergence(&m, &mid)?;
    }
    Ok(c)
}

/// `-2 KL(A || B)` with `A = (p_d R1 + p_g R0)/2` and
/// `B = (p_d + p_g)(R1 + R0 - 1)(1/2)/4`, summed over x.
/// `NaN` wherever some `B(v) <= 0` meets `A(v) > 0`.
pub fn literal_v_prime(world: &DiscreteWorld) -> f64 {
    let mut total = 0.0;
    for x in 0..world.n_x() {
        let (pd, pg) = (world.p_data[x], world.p_g[x]);
        for (r1, r0) in world.r1.iter().zip(&world.r0) {
            let a = (pd * r1 + pg * r0) / 2.0;
            let b = (pd + pg) * (r1 + r0 - 1.0) * 0.5 / 4.0;
            if a > 0.0 {
                if b <= 0.0 {
                    return f64::NAN;
                }
                total += a * (a / b).ln();
            }
        }
    }
    -2.0 * total
}

/// Every distribution on `n` points whose entries are multiples of `1/steps`.
pub fn simplex_grid(n: usize, steps: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if n == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for i in 0..=left {
            cur.push(i);
            rec(n - 1, left - i, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, steps, &mut Vec::new(), &mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub grid_points: usize,
    /// Grid argmin of C.
    pub minimizer: Vec<f64>,
    pub min_value: f64,
    /// C at `p_g = p_data`.
    pub at_data: f64,
    /// Smallest C over grid points other than `p_data`.
    pub margin: f64,
    /// Grid points other than `p_data` where C is not strictly positive.
    pub zero_elsewhere: usize,
    /// C = 0 at `p_data` and C > 0 everywhere else.
    pub unique_at_data: bool,
    /// `max_v |R1(v) - R0(v)|`.
    pub separation: f64,
}

/// Evaluates C over every grid distribution `p_g` (entries multiples of
/// `1/steps`); `p_data_counts` must itself lie on the grid.
pub fn theorem2_sweep(p_data_counts: &[usize], steps: usize, r1: &[f64], r0: &[f64]) -> Result<SweepReport> {
    if p_data_counts.iter().sum::<usize>() != steps || p_data_counts.len() > 4 {
        return Err(config("p_data must lie on the grid, n_x <= 4"));
    }
    let to_p = |c: &[usize]| c.iter().map(|&v| v as f64 / steps as f64).collect::<Vec<_>>();
    let p_data = to_p(p_data_counts);
    let mut min_value = f64::INFINITY;
    let mut minimizer = Vec::new();
    let mut at_data = f64::NAN;
    let mut margin = f64::INFINITY;
    let mut zero_elsewhere = 0;
    let grid = simplex_grid(p_data_counts.len(), steps);
    for counts in &grid {
        let world = DiscreteWorld {
            p_data: p_data.clone(),
            p_g: to_p(counts),
            r1: r1.to_vec(),
            r0: r0.to_vec(),
        };
        let c = generator_criterion(&world)?;
        if c < min_value {
            min_value = c;
            minimizer = world.p_g.clone();
        }
        if counts.as_slice() == p_data_counts {
            at_data = c;
        } else {
            margin = margin.min(c);
            if c <= 0.0 {
                zero_elsewhere += 1;
            }
        }
    }
    Ok(SweepReport {
        grid_points: grid.len(),
        minimizer,
        min_value,
        at_data,
        margin,
        zero_elsewhere,
        unique_at_data: at_data == 0.0 && zero_elsewhere == 0,
        separation: r1.iter().zip(r0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
    })
}

/// One row of the verification CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryRow {
    pub world: usize,
    pub variant: String,
    pub sup_gap: f64,
    pub c_minimizer: String,
    /// `None` for informational rows.
    pub pass: Option<bool>,
    pub v_prime_literal: f64,
    pub d_star_max: f64,
}

fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Per world: the numeric optimum of each variant against its closed form,
/// and the literal optimal-discriminator formula (raw and normalized)
/// against both numeric optima.
pub fn verify_world(id: usize, world: &DiscreteWorld, steps: usize) -> Result<Vec<TheoryRow>> {
    let mut kl_gap: f64 = 0.0;
    let mut plus_gap: f64 = 0.0;
    let mut literal_vs = [0.0f64; 4];
    let mut d_star_max = f64::NEG_INFINITY;
    for x in 0..world.n_x() {
        let cf = optimal_d_closed_form(world, x)?;
        let px = normalized(proof_px(world, x)?);
        let a = optimal_d_numeric(world, x, ObjectiveVariant::KlOnly)?;
        let b = optimal_d_numeric(world, x, ObjectiveVariant::KlPlusScalar)?;
        kl_gap = kl_gap.max(sup_gap(&a.d, &cf.mixture));
        plus_gap = plus_gap.max(sup_gap(&b.d, &px));
        let literal_norm = normalized(cf.literal.clone());
        literal_vs[0] = literal_vs[0].max(sup_gap(&cf.literal, &a.d));
        literal_vs[1] = literal_vs[1].max(sup_gap(&cf.literal, &b.d));
        literal_vs[2] = literal_vs[2].max(sup_gap(&literal_norm, &a.d));
        literal_vs[3] = literal_vs[3].max(sup_gap(&literal_norm, &b.d));
        d_star_max = d_star_max.max(cf.literal.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    // C-minimizer on the grid nearest to this world's p_data
    let counts = grid_counts(&world.p_data, steps);
    let sweep = theorem2_sweep(&counts, steps, &world.r1, &world.r0)?;
    let loc = sweep
        .minimizer
        .iter()
        .map(|v| format!("{v:.2}"))
        .collect::<Vec<_>>()
        .join(";");
    let vp = literal_v_prime(world);
    let row = |variant: &str, gap: f64, pass: Option<bool>| TheoryRow {
        world: id,
        variant: variant.to_string(),
        sup_gap: gap,
        c_minimizer: loc.clone(),
        pass,
        v_prime_literal: vp,
        d_star_max,
    };
    Ok(vec![
        row("kl_only", kl_gap, Some(kl_gap < 1e-4 && sweep.unique_at_data)),
        row("kl_plus_scalar", plus_gap, Some(plus_gap < 1e-6)),
        row("literal_vs_kl_only", literal_vs[0], None),
        row("literal_vs_kl_plus_scalar", literal_vs[1], None),
        row("literal_normalized_vs_kl_only", literal_vs[2], None),
        row("literal_normalized_vs_kl_plus_scalar", literal_vs[3], None),
    ])
}

/// Rounds a distribution to integer counts summing to `steps`
/// (largest-remainder).
pub fn grid_counts(p: &[f64], steps: usize) -> Vec<usize> {
    let raw: Vec<f64> = p.iter().map(|v| v * steps as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|v| v.floor() as usize).collect();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())));
    let mut left = steps - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

pub fn write_csv(w: impl Write, rows: &[TheoryRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "world",
        "variant",
        "sup_norm_gap",
        "c_minimizer",
        "pass",
        "v_prime_literal",
        "d_star_max",
    ])?;
    for r in rows {
        out.write_record([
            r.world.to_string(),
            r.variant.clone(),
            format!("{:.3e}", r.sup_gap),
            r.c_minimizer.clone(),
            match r.pass {
                Some(true) => "pass".into(),
                Some(false) => "fail".into(),
                None => "info".into(),
            },
            format!("{}", r.v_prime_literal),
            format!("{:.6}", r.d_star_max),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// The full verification over `worlds` random worlds (n_x cycling 1..=4,
/// K = 10) on a grid of step `1/steps`.
pub fn verify_random_worlds(worlds: usize, seed: u64, steps: usize) -> Result<Vec<TheoryRow>> {
    let mut rows = Vec::new();
    for id in 0..worlds {
        let world = DiscreteWorld::random(seed.wrapping_add(id as u64), 1 + id % 4, 10);
        rows.extend(verify_world(id, &world, steps)?);
    }
    Ok(rows)
}
