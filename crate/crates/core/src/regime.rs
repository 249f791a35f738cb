//! Continuous-time Markov chains for river inflow regimes.
//!
//! Off-diagonal entries `s[i][j]` are transition rates in 1/day; the
//! diagonal of the generator is derived as minus the row sum. Regime
//! indices are zero-based in this API.
//!
//! Chain files are plain text:
//!
//! ```text
//! I
//! s_11 s_12 ... s_1I
//! ...
//! s_I1 s_I2 ... s_II
//! Q_1 Q_2 ... Q_I
//! ```
//!
//! Diagonal rates are read but ignored; discharges are in m³/s.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::simulate::{exponential, path_rng};

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeChain {
    n: usize,
    rates: Vec<f64>,
    discharges: Vec<f64>,
}

fn invalid<T>(location: String, message: impl Into<String>) -> Result<T> {
    Err(Error::Validation { location, message: message.into() })
}

impl RegimeChain {
    /// Builds a chain from an `I x I` rate matrix (diagonal ignored) and `I`
    /// discharges.
    pub fn new(rates: Vec<Vec<f64>>, discharges: Vec<f64>) -> Result<Self> {
        let n = discharges.len();
        if n == 0 {
            return invalid("discharges".into(), "chain needs at least one regime");
        }
        if rates.len() != n {
            return invalid("rates".into(), format!("{} rows for {} regimes", rates.len(), n));
        }
        let mut flat = vec![0.0; n * n];
        for (i, row) in rates.iter().enumerate() {
            if row.len() != n {
                return invalid(format!("rates row {}", i + 1), format!("{} entries, expected {n}", row.len()));
            }
            for (j, &s) in row.iter().enumerate() {
                if i == j {
                    continue;
                }
                if !s.is_finite() || s < 0.0 {
                    return invalid(format!("rate ({}, {})", i + 1, j + 1), format!("must be finite and >= 0, got {s}"));
                }
                flat[i * n + j] = s;
            }
        }
        for (i, &q) in discharges.iter().enumerate() {
            if !q.is_finite() || q <= 0.0 {
                return invalid(format!("discharge {}", i + 1), format!("must be > 0, got {q}"));
            }
        }
        Ok(Self { n, rates: flat, discharges })
    }

    /// Chain without transitions: every regime is absorbing.
    pub fn decoupled(discharges: Vec<f64>) -> Result<Self> {
        let n = discharges.len();
        Self::new(vec![vec![0.0; n]; n], discharges)
    }

    pub fn n_regimes(&self) -> usize {
        self.n
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.rates[i * self.n + j]
    }

    pub fn exit_rate(&self, i: usize) -> f64 {
        self.rates[i * self.n..(i + 1) * self.n].iter().sum()
    }

    pub fn max_exit_rate(&self) -> f64 {
        (0..self.n).map(|i| self.exit_rate(i)).fold(0.0, f64::max)
    }

    pub fn discharge(&self, i: usize) -> f64 {
        self.discharges[i]
    }

    pub fn discharges(&self) -> &[f64] {
        &self.discharges
    }

    /// Nonzero off-diagonal transitions out of regime `i`.
    pub fn neighbours(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.n).filter(move |&j| j != i).map(move |j| (j, self.rate(i, j))).filter(|&(_, s)| s > 0.0)
    }

    /// Generator matrix with the derived diagonal.
    pub fn generator(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| if i == j { -self.exit_rate(i) } else { self.rate(i, j) }).collect())
            .collect()
    }

    /// Same chain with every rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { n: self.n, rates: self.rates.iter().map(|s| s * factor).collect(), discharges: self.discharges.clone() }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.n);
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|j| format!("{}", self.rate(i, j))).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        let q: Vec<String> = self.discharges.iter().map(|q| format!("{q}")).collect();
        out.push_str(&q.join(" "));
        out.push('\n');
        out
    }
}

/// Reservoir-problem discharges `Q(i) = 1.25 + 2.5 i`, `i = 1..=61` (m³/s).
pub fn reservoir_preset_discharges() -> Vec<f64> {
    (1..=61).map(|i| 1.25 + 2.5 * i as f64).collect()
}

/// Coupled-problem discharges `Q(i) = 2.5 + 5 (i - 1)`, `i = 1..=21` (m³/s).
pub fn coupled_preset_discharges() -> Vec<f64> {
    (1..=21).map(|i| 2.5 + 5.0 * (i - 1) as f64).collect()
}

/// Nearest-neighbour chain with `s[i][i+1] = up_rate`, `s[i][i-1] = down_rate`.
pub fn synth_birth_death(n: usize, up_rate: f64, down_rate: f64, discharges: Vec<f64>) -> Result<RegimeChain> {
    if n < 1 || discharges.len() != n {
        return invalid("regimes".into(), format!("{} discharges for {n} regimes", discharges.len()));
    }
    if !(up_rate > 0.0 && down_rate > 0.0) {
        return invalid("rates".into(), format!("birth-death rates must be > 0, got up {up_rate}, down {down_rate}"));
    }
    let mut rates = vec![vec![0.0; n]; n];
    for i in 0..n {
        if i + 1 < n {
            rates[i][i + 1] = up_rate;
        }
        if i > 0 {
            rates[i][i - 1] = down_rate;
        }
    }
    RegimeChain::new(rates, discharges)
}

pub fn parse_chain(text: &str) -> Result<RegimeChain> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let parse_row = |lineno: usize, line: &str| -> Result<Vec<f64>> {
        line.split_whitespace()
            .enumerate()
            .map(|(col, tok)| {
                tok.parse::<f64>().map_err(|_| Error::Validation {
                    location: format!("line {}, column {}", lineno + 1, col + 1),
                    message: format!("cannot parse {tok:?} as a number"),
                })
            })
            .collect()
    };
    let (lineno, first) = lines.next().ok_or_else(|| Error::Validation {
        location: "line 1".into(),
        message: "empty chain file".into(),
    })?;
    let n: usize = first.trim().parse().map_err(|_| Error::Validation {
        location: format!("line {}", lineno + 1),
        message: format!("expected regime count, got {:?}", first.trim()),
    })?;
    let mut rows = Vec::with_capacity(n);
    for r in 0..n {
        let (lineno, line) = lines.next().ok_or_else(|| Error::Validation {
            location: format!("rates row {}", r + 1),
            message: "missing row".into(),
        })?;
        let row = parse_row(lineno, line)?;
        if row.len() != n {
            return invalid(format!("line {}", lineno + 1), format!("{} rates, expected {n}", row.len()));
        }
        for (c, &s) in row.iter().enumerate() {
            if c != r && s < 0.0 {
                return invalid(format!("line {}, column {} (rate {}, {})", lineno + 1, c + 1, r + 1, c + 1), format!("negative rate {s}"));
            }
        }
        rows.push(row);
    }
    let (lineno, line) = lines.next().ok_or_else(|| Error::Validation {
        location: "discharges".into(),
        message: "missing discharge line".into(),
    })?;
    let q = parse_row(lineno, line)?;
    if q.len() != n {
        return invalid(format!("line {}", lineno + 1), format!("{} discharges, expected {n}", q.len()));
    }
    if let Some((lineno, _)) = lines.next() {
        return invalid(format!("line {}", lineno + 1), "unexpected trailing content");
    }
    RegimeChain::new(rows, q)
}

pub fn load_chain(path: impl AsRef<Path>) -> Result<RegimeChain> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_chain(&text)
}

/// Piecewise-constant regime path `(switch time, regime)` starting at
/// `(0, i0)` and covering `[0, horizon]`.
pub fn sample_path_with<R: Rng + ?Sized>(chain: &RegimeChain, i0: usize, horizon: f64, rng: &mut R) -> Vec<(f64, usize)> {
    let mut path = vec![(0.0, i0)];
    let mut t = 0.0;
    let mut i = i0;
    loop {
        let exit = chain.exit_rate(i);
        if exit <= 0.0 {
            break;
        }
        t += exponential(rng, exit);
        if t > horizon {
            break;
        }
        i = next_regime(chain, i, exit, rng);
        path.push((t, i));
    }
    path
}

/// Draws the destination of a jump out of `i` proportionally to the rates.
pub fn next_regime<R: Rng + ?Sized>(chain: &RegimeChain, i: usize, exit: f64, rng: &mut R) -> usize {
    let u = rng.gen::<f64>() * exit;
    let mut acc = 0.0;
    let mut last = i;
    for (j, s) in chain.neighbours(i) {
        acc += s;
        last = j;
        if u < acc {
            return j;
        }
    }
    last
}

pub fn sample_path(chain: &RegimeChain, i0: usize, horizon: f64, rng_seed: u64) -> Vec<(f64, usize)> {
    sample_path_with(chain, i0, horizon, &mut path_rng(rng_seed, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn preset_discharge_vectors() {
        let r = reservoir_preset_discharges();
        assert_eq!(r.len(), 61);
        assert_eq!(r[0], 3.75);
        assert_eq!(r[60], 153.75);
        let c = coupled_preset_discharges();
        assert_eq!(c.len(), 21);
        assert_eq!((c[0], c[20]), (2.5, 102.5));
        assert!(c.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn parse_and_validate() {
        let chain = parse_chain("2\n0 0.1\n0.2 0\n5 50\n").unwrap();
        assert_eq!(chain.rate(0, 1), 0.1);
        assert_eq!(chain.rate(1, 0), 0.2);
        assert_eq!(chain.discharges(), &[5.0, 50.0]);
        assert_eq!(parse_chain(&chain.to_text()).unwrap(), chain);

        let neg = parse_chain("2\n0 -1\n0.2 0\n5 50\n").unwrap_err();
        assert!(neg.to_string().contains("line 2, column 2"), "{neg}");
        let zero = parse_chain("2\n0 0.1\n0.2 0\n0 50\n").unwrap_err();
        assert!(zero.to_string().contains("discharge 1"), "{zero}");
        assert!(parse_chain("2\n0 x\n0.2 0\n5 50\n").is_err());
        assert!(parse_chain("2\n0 0.1\n0.2 0\n").is_err());
    }

    #[test]
    fn birth_death_structure() {
        let c = synth_birth_death(3, 0.1, 0.2, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(c.rate(0, 1), 0.1);
        assert_eq!(c.rate(1, 0), 0.2);
        assert_eq!(c.rate(0, 2), 0.0);
        for row in c.generator() {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
        let two = synth_birth_death(2, 1.0, 1.0, vec![1.0, 2.0]).unwrap();
        assert_eq!(two.exit_rate(0), 1.0);
        assert_eq!(two.exit_rate(1), 1.0);
    }

    #[test]
    fn embedded_chain_detailed_balance() {
        let (n, up, down) = (6, 0.3, 0.7);
        let c = synth_birth_death(n, up, down, (1..=n).map(|i| i as f64).collect()).unwrap();
        // Dense null-space oracle: solve pi (P - I) = 0 with sum(pi) = 1.
        let mut a = DMatrix::<f64>::zeros(n + 1, n);
        for i in 0..n {
            for j in 0..n {
                let p = if i == j { 0.0 } else { c.rate(i, j) / c.exit_rate(i) };
                a[(j, i)] = p - if i == j { 1.0 } else { 0.0 };
            }
        }
        for j in 0..n {
            a[(n, j)] = 1.0;
        }
        let mut b = DVector::<f64>::zeros(n + 1);
        b[n] = 1.0;
        let pi = (a.transpose() * &a).lu().solve(&(a.transpose() * b)).unwrap();
        for i in 0..n - 1 {
            let flow_up = pi[i] * c.rate(i, i + 1) / c.exit_rate(i);
            let flow_down = pi[i + 1] * c.rate(i + 1, i) / c.exit_rate(i + 1);
            assert!((flow_up - flow_down).abs() < 1e-12);
        }
    }

    #[test]
    fn absorbing_chain_single_segment() {
        let c = RegimeChain::decoupled(vec![1.0, 2.0]).unwrap();
        assert_eq!(sample_path(&c, 1, 100.0, 5), vec![(0.0, 1)]);
    }

    #[test]
    fn holding_times_and_frequencies() {
        let two = synth_birth_death(2, 1.0, 1.0, vec![1.0, 2.0]).unwrap();
        let path = sample_path(&two, 0, 100_000.0, 17);
        let holds: Vec<f64> = path.windows(2).map(|w| w[1].0 - w[0].0).collect();
        let mean = holds.iter().sum::<f64>() / holds.len() as f64;
        assert!(holds.len() > 90_000);
        assert!((mean - 1.0).abs() < 0.02, "mean holding {mean}");

        let c = synth_birth_death(3, 0.2, 0.6, vec![1.0, 2.0, 3.0]).unwrap();
        let path = sample_path(&c, 1, 200_000.0, 23);
        let (mut from_mid, mut up) = (0usize, 0usize);
        for w in path.windows(2) {
            if w[0].1 == 1 {
                from_mid += 1;
                up += (w[1].1 == 2) as usize;
            }
        }
        let p = 0.25;
        let sigma = (p * (1.0 - p) / from_mid as f64).sqrt();
        let freq = up as f64 / from_mid as f64;
        assert!((freq - p).abs() <= 3.0 * sigma, "freq {freq} over {from_mid} jumps");

        assert_eq!(sample_path(&c, 0, 50.0, 1), sample_path(&c, 0, 50.0, 1));
    }
}
