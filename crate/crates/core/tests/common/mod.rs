//! Brute-force reference computations and random instance builders for
//! the integration suites. Nothing here calls the solver paths under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sector_factor::model::{FactorModel, LoadingMask, Membership, ReturnsPanel, Sector, SectorMap};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn gj_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut m = vec![vec![0.0; 2 * n]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a[(i, j)];
        }
        m[i][n + i] = 1.0;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let d = m[col][col];
        assert!(d != 0.0, "singular matrix in oracle");
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    let pivot = m[col].clone();
                    for (v, pv) in m[r].iter_mut().zip(&pivot) {
                        *v -= f * pv;
                    }
                }
            }
        }
    }
    DMatrix::from_fn(n, n, |i, j| m[i][n + j])
}

pub fn matmul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.nrows());
    DMatrix::from_fn(a.nrows(), b.ncols(), |i, j| {
        let mut s = 0.0;
        for k in 0..a.ncols() {
            s += a[(i, k)] * b[(k, j)];
        }
        s
    })
}

pub fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        diff += (x - y) * (x - y);
        norm += y * y;
    }
    if norm == 0.0 {
        diff.sqrt()
    } else {
        (diff / norm).sqrt()
    }
}

/// Triple loop `Σ_k Λ_jk Λ_lk + δ_jl ψ_j`.
pub fn implied_cov_oracle(lambda: &DMatrix<f64>, psi: &DVector<f64>) -> DMatrix<f64> {
    let (n, m) = lambda.shape();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        for l in 0..n {
            let mut s = 0.0;
            for k in 0..m {
                s += lambda[(j, k)] * lambda[(l, k)];
            }
            if j == l {
                s += psi[j];
            }
            out[(j, l)] = s;
        }
    }
    out
}

pub struct MomentOracle {
    pub beta: DMatrix<f64>,
    pub ef: DMatrix<f64>,
    pub eff: Vec<DMatrix<f64>>,
    pub eff_sum: DMatrix<f64>,
    pub cross_sum: DMatrix<f64>,
}

/// Per-observation posterior moments with `β` formed by dense inversion.
pub fn e_step_oracle(lambda: &DMatrix<f64>, psi: &DVector<f64>, x: &DMatrix<f64>) -> MomentOracle {
    let (n, m) = lambda.shape();
    let p = x.ncols();
    let sigma_inv = gj_inverse(&implied_cov_oracle(lambda, psi));
    let beta = matmul(&lambda.transpose(), &sigma_inv);
    let beta_lambda = matmul(&beta, lambda);
    let mut ef = DMatrix::zeros(m, p);
    let mut eff = Vec::with_capacity(p);
    let mut eff_sum = DMatrix::zeros(m, m);
    let mut cross_sum = DMatrix::zeros(n, m);
    for i in 0..p {
        let mut e = vec![0.0; m];
        for r in 0..m {
            for j in 0..n {
                e[r] += beta[(r, j)] * x[(j, i)];
            }
            ef[(r, i)] = e[r];
        }
        let mut s = DMatrix::zeros(m, m);
        for r in 0..m {
            for c in 0..m {
                let id = if r == c { 1.0 } else { 0.0 };
                s[(r, c)] = id - beta_lambda[(r, c)] + e[r] * e[c];
            }
        }
        eff_sum += &s;
        eff.push(s);
        for j in 0..n {
            for r in 0..m {
                cross_sum[(j, r)] += x[(j, i)] * e[r];
            }
        }
    }
    MomentOracle {
        beta,
        ef,
        eff,
        eff_sum,
        cross_sum,
    }
}

/// `(1/p)(Σ_i X_ji² − Σ_k Λ_jk A_jk)`, floored.
pub fn psi_oracle(x: &DMatrix<f64>, cross_sum: &DMatrix<f64>, lambda_new: &DMatrix<f64>, floor: f64) -> Vec<f64> {
    let (n, p) = x.shape();
    (0..n)
        .map(|j| {
            let mut s = 0.0;
            for i in 0..p {
                s += x[(j, i)] * x[(j, i)];
            }
            for k in 0..lambda_new.ncols() {
                s -= lambda_new[(j, k)] * cross_sum[(j, k)];
            }
            (s / p as f64).max(floor)
        })
        .collect()
}

/// Term-by-term `Q` with the additive constant dropped.
pub fn q_oracle(lambda: &DMatrix<f64>, psi: &DVector<f64>, x: &DMatrix<f64>) -> f64 {
    let (n, m) = lambda.shape();
    let p = x.ncols();
    let mo = e_step_oracle(lambda, psi, x);
    let mut q = 0.0;
    for j in 0..n {
        q -= 0.5 * p as f64 * psi[j].ln();
    }
    for i in 0..p {
        let mut t1 = 0.0;
        for j in 0..n {
            t1 += x[(j, i)] * x[(j, i)] / psi[j];
        }
        let mut t2 = 0.0;
        for j in 0..n {
            let mut le = 0.0;
            for k in 0..m {
                le += lambda[(j, k)] * mo.ef[(k, i)];
            }
            t2 += x[(j, i)] / psi[j] * le;
        }
        let mut t3 = 0.0;
        for k in 0..m {
            for l in 0..m {
                let mut g = 0.0;
                for j in 0..n {
                    g += lambda[(j, k)] * lambda[(j, l)] / psi[j];
                }
                t3 += g * mo.eff[i][(l, k)];
            }
        }
        q -= 0.5 * t1 - t2 + 0.5 * t3;
    }
    q
}

/// `A · B⁻¹` via dense inversion.
pub fn unconstrained_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    matmul(a, &gj_inverse(b))
}

/// Row-wise: extract `B(I_j, I_j)`, invert densely, scatter.
pub fn constrained_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>, mask: &LoadingMask) -> DMatrix<f64> {
    let (n, m) = a.shape();
    let mut out = DMatrix::zeros(n, m);
    for j in 0..n {
        let idx: Vec<usize> = (0..m).filter(|&k| mask.pattern()[(j, k)]).collect();
        let s = idx.len();
        let sub = DMatrix::from_fn(s, s, |r, c| b[(idx[r], idx[c])]);
        let inv = gj_inverse(&sub);
        for (c, &kc) in idx.iter().enumerate() {
            let mut v = 0.0;
            for (r, &kr) in idx.iter().enumerate() {
                v += a[(j, kr)] * inv[(r, c)];
            }
            out[(j, kc)] = v;
        }
    }
    out
}

/// Linear-scan threshold filter returning selected indices in input order.
pub fn threshold_oracle(column: &[f64], threshold: f64) -> Vec<usize> {
    let mut max = 0.0f64;
    for v in column {
        if v.abs() > max {
            max = v.abs();
        }
    }
    (0..column.len()).filter(|&i| column[i].abs() >= threshold * max).collect()
}

pub fn ids(n: usize) -> Vec<String> {
    (0..n).map(|j| format!("S{j:03}")).collect()
}

/// Random membership per stock over the 11 sectors and UNCLASSIFIED.
pub fn random_sectors(rng: &mut ChaCha8Rng, stock_ids: &[String]) -> SectorMap {
    SectorMap::from_pairs(stock_ids.iter().map(|id| {
        let code = rng.random_range(0..=11u8);
        let m = if code == 0 {
            Membership::Unclassified
        } else {
            Membership::Sector(Sector::from_code(code).unwrap())
        };
        (id.clone(), m)
    }))
}

pub struct Instance {
    pub model: FactorModel,
    pub panel: ReturnsPanel,
    pub sectors: SectorMap,
}

/// Small random model and panel: `n ≤ 8`, `m ≤ 13`, `p ≤ 10`. Uses a
/// sector mask when `m ≥ 12` and a coin says so, otherwise a dense one.
pub fn small_instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let n = r.random_range(1..=8);
    let m = r.random_range(1..=13);
    let p = r.random_range(2..=10);
    let stock_ids = ids(n);
    let sectors = random_sectors(&mut r, &stock_ids);
    let mask = if m >= 12 && r.random::<bool>() {
        LoadingMask::sector(&sectors, &stock_ids, m).unwrap()
    } else {
        LoadingMask::dense(n, m).unwrap()
    };
    let lambda = DMatrix::from_fn(n, m, |j, k| {
        let z = normal(&mut r);
        if mask.allows(j, k) {
            z
        } else {
            0.0
        }
    });
    let psi = DVector::from_fn(n, |_, _| r.random_range(0.1..1.0));
    let x = DMatrix::from_fn(n, p, |_, _| normal(&mut r));
    let model = FactorModel::new(stock_ids.clone(), lambda, psi, mask).unwrap();
    let panel = ReturnsPanel::with_default_dates(stock_ids, x).unwrap();
    Instance { model, panel, sectors }
}

/// Random SPD `B` (m × m) and `A` (n × m).
pub fn random_moments(seed: u64, n: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut r = rng(seed);
    let g = DMatrix::from_fn(m, m, |_, _| normal(&mut r));
    let b = matmul(&g, &g.transpose()) + DMatrix::identity(m, m) * m as f64;
    let a = DMatrix::from_fn(n, m, |_, _| normal(&mut r));
    (a, b)
}
