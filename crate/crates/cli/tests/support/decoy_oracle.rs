//! Uncorrelated three-intensity decoy-state key rate, computed by enumerating
//! every vertex of the single-photon bound programs.
//!
//! Variables are the yields (or error yields) of photon numbers `0..=n_cut`,
//! boxed in `[0, 1]`. Each intensity contributes the two-sided constraint
//! `g - tail <= sum_n P(n) y_n <= g`. A vertex has each row either inactive or
//! tight on one side, at most one basic variable per tight row, and every
//! other variable at a bound, so enumerating those choices covers all
//! vertices.
//!
//! The error program drops the coupling `h_n <= y_n`, which can only raise
//! its maximum.

pub struct Channel {
    pub eta_det: f64,
    pub alpha_att: f64,
    pub dark_count: f64,
    pub misalignment: f64,
    pub f_ec: f64,
    pub q: f64,
}

impl Channel {
    pub fn standard() -> Self {
        Channel {
            eta_det: 0.65,
            alpha_att: 0.2,
            dark_count: 7.2e-8,
            misalignment: 0.08,
            f_ec: 1.16,
            q: 0.5,
        }
    }

    fn eta(&self, l: f64) -> f64 {
        self.eta_det * 10f64.powf(-self.alpha_att * l / 10.0)
    }

    /// Click probability per pulse of intensity `a` (normalized by q² p_a).
    pub fn gain(&self, a: f64, l: f64) -> f64 {
        let pd = self.dark_count;
        1.0 - (1.0 - pd) * (1.0 - pd) * (-self.eta(l) * a).exp()
    }

    /// Error-click probability per pulse of intensity `a`.
    pub fn error_gain(&self, a: f64, l: f64) -> f64 {
        let pd = self.dark_count;
        let eta = self.eta(l);
        let d = self.misalignment;
        let h = 0.5 * ((-eta * a * d.cos().powi(2)).exp() - (-eta * a * d.sin().powi(2)).exp());
        pd * pd / 2.0 + pd * (1.0 - pd) * (1.0 + h) + (1.0 - pd).powi(2) * (0.5 + h - 0.5 * (-eta * a).exp())
    }
}

pub fn poisson(n: usize, a: f64) -> f64 {
    let mut p = (-a).exp();
    for k in 1..=n {
        p *= a / k as f64;
    }
    p
}

struct Problem {
    /// rows[i] = (coefficients, lower, upper)
    rows: Vec<(Vec<f64>, f64, f64)>,
    dim: usize,
}

impl Problem {
    fn feasible(&self, x: &[f64]) -> bool {
        self.rows.iter().all(|(c, lo, hi)| {
            let v: f64 = c.iter().zip(x).map(|(a, b)| a * b).sum();
            let tol = 1e-12 * hi.abs().max(1e-300);
            v <= hi + tol && v >= lo - tol
        }) && x.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v))
    }
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let k = b.len();
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        let scale = a.iter().map(|r| r[col].abs()).fold(0.0, f64::max);
        if a[piv][col].abs() <= 1e-14 * scale || scale == 0.0 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for i in 0..k {
            if i != col {
                let f = a[i][col] / a[col][col];
                for j in col..k {
                    a[i][j] -= f * a[col][j];
                }
                b[i] -= f * b[col];
            }
        }
    }
    Some((0..k).map(|i| b[i] / a[i][i]).collect())
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Optimum of `maximize ? +x[target] : -x[target]` over all vertices.
fn extremum(p: &Problem, target: usize, maximize: bool) -> Option<f64> {
    let n = p.dim;
    let m = p.rows.len();
    let mut best: Option<f64> = None;
    // side[i]: 0 inactive, 1 tight at lower, 2 tight at upper
    let combos = 3usize.pow(m as u32);
    for code in 0..combos {
        let mut tight = Vec::new();
        let mut c = code;
        for i in 0..m {
            match c % 3 {
                1 => tight.push((i, p.rows[i].1)),
                2 => tight.push((i, p.rows[i].2)),
                _ => {}
            }
            c /= 3;
        }
        let k = tight.len();
        for basis in subsets(n, k) {
            let free: Vec<usize> = (0..n).filter(|j| !basis.contains(j)).collect();
            for mask in 0..(1u32 << free.len()) {
                let mut x = vec![0.0; n];
                for (b, &j) in free.iter().enumerate() {
                    x[j] = f64::from((mask >> b) & 1);
                }
                let a: Vec<Vec<f64>> = tight.iter().map(|&(i, _)| basis.iter().map(|&j| p.rows[i].0[j]).collect()).collect();
                let rhs: Vec<f64> = tight
                    .iter()
                    .map(|&(i, v)| v - free.iter().map(|&j| p.rows[i].0[j] * x[j]).sum::<f64>())
                    .collect();
                let Some(sol) = solve_dense(a, rhs) else { continue };
                for (&j, v) in basis.iter().zip(sol) {
                    x[j] = v;
                }
                if p.feasible(&x) {
                    let v = x[target];
                    best = Some(match best {
                        None => v,
                        Some(b) if maximize => b.max(v),
                        Some(b) => b.min(v),
                    });
                }
            }
        }
    }
    best.map(|v| v.clamp(0.0, 1.0))
}

fn program(intensities: [f64; 3], n_cut: usize, observed: impl Fn(f64) -> f64) -> Problem {
    let rows = intensities
        .iter()
        .map(|&a| {
            let c: Vec<f64> = (0..=n_cut).map(|n| poisson(n, a)).collect();
            // Summed directly: 1 - sum(c) cancels to noise for weak pulses.
            let tail: f64 = (n_cut + 1..n_cut + 80).map(|n| poisson(n, a)).sum();
            let g = observed(a);
            (c, (g - tail).max(0.0), g)
        })
        .collect();
    Problem { rows, dim: n_cut + 1 }
}

fn entropy(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OracleRate {
    pub y1_lower: f64,
    pub h1_upper: f64,
    pub key_rate: f64,
}

/// Intensities ordered signal, decoy, vacuum; `p_signal` weights the key.
pub fn key_rate(ch: &Channel, intensities: [f64; 3], p_signal: f64, n_cut: usize, l: f64) -> OracleRate {
    let y1 = extremum(&program(intensities, n_cut, |a| ch.gain(a, l)), 1, false).expect("gain program feasible");
    let h1 = extremum(&program(intensities, n_cut, |a| ch.error_gain(a, l)), 1, true).expect("error program feasible");
    let mu = intensities[0];
    let w = ch.q * ch.q * p_signal * poisson(1, mu);
    let z1 = w * y1;
    let e1 = w * h1;
    let signal = ch.q * ch.q * p_signal * ch.gain(mu, l);
    let e_tol = ch.error_gain(mu, l) / ch.gain(mu, l);
    let phase = if z1 > 0.0 { (e1 / z1).min(0.5) } else { 0.5 };
    let k = (z1 * (1.0 - entropy(phase)) - ch.f_ec * signal * entropy(e_tol)).max(0.0);
    OracleRate {
        y1_lower: y1,
        h1_upper: h1,
        key_rate: k,
    }
}

/// Closed-form vacuum+weak decoy estimate (vacuum intensity `w` > 0 allowed).
/// Looser than the program optimum.
pub fn textbook_key_rate(ch: &Channel, [mu, nu, w]: [f64; 3], p_signal: f64, l: f64) -> f64 {
    let q = |a: f64| ch.gain(a, l);
    let e = |a: f64| ch.error_gain(a, l);
    let s0 = ((nu * q(w) * w.exp() - w * q(nu) * nu.exp()) / (nu - w)).max(0.0);
    let y1 = mu / (mu * (nu - w) - nu * nu + w * w)
        * (q(nu) * nu.exp() - q(w) * w.exp() - (nu * nu - w * w) / (mu * mu) * (q(mu) * mu.exp() - s0));
    let h1 = (e(nu) * nu.exp() - e(w) * w.exp()) / (nu - w);
    let weight = ch.q * ch.q * p_signal * mu * (-mu).exp();
    let z1 = weight * y1;
    let signal = ch.q * ch.q * p_signal * q(mu);
    let e_tol = e(mu) / q(mu);
    (z1 * (1.0 - entropy((h1 / y1).min(0.5))) - ch.f_ec * signal * entropy(e_tol)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertex_search_matches_hand_solved_program() {
        // min x1 s.t. 0.5 <= x0 + x1 <= 0.8, 0.6 <= x1 + x2 <= 1, box [0, 1]
        let p = Problem {
            rows: vec![(vec![1.0, 1.0, 0.0], 0.5, 0.8), (vec![0.0, 1.0, 1.0], 0.6, 1.0)],
            dim: 3,
        };
        assert!((extremum(&p, 1, false).unwrap() - 0.0).abs() < 1e-15);
        assert!((extremum(&p, 1, true).unwrap() - 0.8).abs() < 1e-15);
        assert!((extremum(&p, 0, true).unwrap() - 0.8).abs() < 1e-15);
    }
}
