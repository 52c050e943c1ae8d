//! Truncated symmetric alpha-stable jump noise: path sampling and the
//! weight functions that define the stochastic derivative on jump sizes.
//!
//! The Lévy density is `σ(u) = scale · |u|^{-1-α}` on
//! `eps_cut ≤ |u| ≤ u_max` and zero elsewhere. Paths are realized as a
//! finite list of jumps plus a linear drift `c_eff · t`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("invalid noise configuration: {0}")]
    InvalidConfig(String),
    #[error("jump size must be nonzero")]
    ZeroJump,
    #[error("interval [{t0}, {t1}] is outside [0, {horizon}]")]
    IntervalOutOfRange { t0: f64, t1: f64, horizon: f64 },
    #[error("malformed noise CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Shape of the jump-size weight `ϱ` on its flat region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    /// `ϱ(u) = u` on the flat region.
    Linear,
    /// `ϱ(u) = u²` on the flat region; keeps `DX` strictly positive.
    Quadratic,
}

impl WeightKind {
    fn as_str(self) -> &'static str {
        match self {
            WeightKind::Linear => "linear",
            WeightKind::Quadratic => "quadratic",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Stability index in (0, 2).
    pub alpha: f64,
    /// Largest jump magnitude.
    pub u_max: f64,
    /// Smallest realized jump magnitude.
    pub eps_cut: f64,
    /// Drift constant of the Lévy–Itô decomposition.
    pub c: f64,
    /// Multiplier of the Lévy density.
    pub scale: f64,
    pub horizon: f64,
    pub seed: u64,
    pub weight: WeightKind,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            alpha: 1.75,
            u_max: 1.0,
            eps_cut: 0.01,
            c: 0.0,
            scale: 1.0,
            horizon: 1.0,
            seed: 0,
            weight: WeightKind::Quadratic,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), NoiseError> {
        let bad = |msg: String| Err(NoiseError::InvalidConfig(msg));
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return bad(format!("alpha = {} must lie in (0, 2)", self.alpha));
        }
        if !(self.eps_cut > 0.0 && self.eps_cut < self.u_max && self.u_max.is_finite()) {
            return bad(format!(
                "need 0 < eps_cut < u_max, got eps_cut = {}, u_max = {}",
                self.eps_cut, self.u_max
            ));
        }
        if 4.0 * self.eps_cut > self.u_max {
            return bad(format!(
                "eps_cut = {} leaves no flat region for the jump weight (need eps_cut <= u_max/4)",
                self.eps_cut
            ));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad(format!("scale = {} must be positive", self.scale));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon = {} must be non-negative", self.horizon));
        }
        if !self.c.is_finite() {
            return bad("drift constant must be finite".into());
        }
        Ok(())
    }

    pub fn with_horizon(&self, horizon: f64) -> NoiseConfig {
        NoiseConfig {
            horizon,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> NoiseConfig {
        NoiseConfig {
            seed,
            ..self.clone()
        }
    }

    /// Total jump intensity `λ = ∫ σ(u) du` over the truncated support.
    pub fn jump_rate(&self) -> f64 {
        2.0 * self.scale * (self.eps_cut.powf(-self.alpha) - self.u_max.powf(-self.alpha))
            / self.alpha
    }

    /// `∫ u² σ(u) du`: variance of the jump part per unit time.
    pub fn jump_variance_rate(&self) -> f64 {
        let p = 2.0 - self.alpha;
        2.0 * self.scale * (self.u_max.powf(p) - self.eps_cut.powf(p)) / p
    }

    /// Drift left after the realized jumps replace the compensated small-jump
    /// integral: `c − ∫_{eps_cut ≤ |u| ≤ 1} u σ(u) du`. The density is
    /// symmetric, so the integral vanishes.
    pub fn effective_drift(&self) -> f64 {
        self.c
    }

    pub fn weight(&self) -> JumpWeight {
        JumpWeight::new(self)
    }
}

/// `σ(u) = scale · |u|^{-1-α}` on the truncated support, zero outside.
pub fn levy_density(u: f64, cfg: &NoiseConfig) -> Result<f64, NoiseError> {
    if u == 0.0 {
        return Err(NoiseError::ZeroJump);
    }
    let v = u.abs();
    if v < cfg.eps_cut || v > cfg.u_max {
        return Ok(0.0);
    }
    Ok(cfg.scale * v.powf(-1.0 - cfg.alpha))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jump {
    pub t: f64,
    pub u: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    jumps: Vec<Jump>,
    c_eff: f64,
    config: NoiseConfig,
}

const CSV_MAGIC: &str = "# levydrift noise path v1";

impl NoisePath {
    /// Build a path from explicit jumps; times must be strictly increasing
    /// inside `[0, horizon]`.
    pub fn from_jumps(
        config: NoiseConfig,
        c_eff: f64,
        jumps: Vec<Jump>,
    ) -> Result<NoisePath, NoiseError> {
        let mut prev = f64::NEG_INFINITY;
        for j in &jumps {
            if !(j.t > prev && j.t >= 0.0 && j.t <= config.horizon) {
                return Err(NoiseError::InvalidConfig(format!(
                    "jump time {} out of order or outside [0, {}]",
                    j.t, config.horizon
                )));
            }
            if j.u == 0.0 || !j.u.is_finite() {
                return Err(NoiseError::ZeroJump);
            }
            prev = j.t;
        }
        Ok(NoisePath {
            jumps,
            c_eff,
            config,
        })
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn c_eff(&self) -> f64 {
        self.c_eff
    }

    pub fn config(&self) -> &NoiseConfig {
        &self.config
    }

    pub fn horizon(&self) -> f64 {
        self.config.horizon
    }

    /// Index range of jumps with `t0 < t ≤ t1`.
    pub fn jump_range(&self, t0: f64, t1: f64) -> std::ops::Range<usize> {
        let lo = self.jumps.partition_point(|j| j.t <= t0);
        let hi = self.jumps.partition_point(|j| j.t <= t1);
        lo..hi.max(lo)
    }

    /// `Z_{t1} − Z_{t0}`.
    pub fn increment(&self, t0: f64, t1: f64) -> Result<f64, NoiseError> {
        if !(0.0 <= t0 && t0 <= t1 && t1 <= self.config.horizon) {
            return Err(NoiseError::IntervalOutOfRange {
                t0,
                t1,
                horizon: self.config.horizon,
            });
        }
        let jumps: f64 = self.jumps[self.jump_range(t0, t1)].iter().map(|j| j.u).sum();
        Ok(self.c_eff * (t1 - t0) + jumps)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), NoiseError> {
        let c = &self.config;
        writeln!(out, "{CSV_MAGIC}")?;
        writeln!(
            out,
            "# alpha={},u_max={},eps_cut={},c={},scale={},horizon={},seed={},weight={},c_eff={}",
            c.alpha,
            c.u_max,
            c.eps_cut,
            c.c,
            c.scale,
            c.horizon,
            c.seed,
            c.weight.as_str(),
            self.c_eff
        )?;
        writeln!(out, "t,u")?;
        let mut buf = String::new();
        for j in &self.jumps {
            buf.clear();
            let _ = writeln!(buf, "{},{}", j.t, j.u);
            out.write_all(buf.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<NoisePath, NoiseError> {
        let csv = |m: &str| NoiseError::Csv(m.to_string());
        let mut lines = input.lines();
        let magic = lines.next().ok_or_else(|| csv("empty input"))??;
        if magic.trim() != CSV_MAGIC {
            return Err(csv("missing schema header"));
        }
        let meta = lines.next().ok_or_else(|| csv("missing config line"))??;
        let mut cfg = NoiseConfig::default();
        let mut c_eff = None;
        for kv in meta.trim_start_matches('#').trim().split(',') {
            let (k, v) = kv.split_once('=').ok_or_else(|| csv(kv))?;
            let num = || v.parse::<f64>().map_err(|_| csv(kv));
            match k {
                "alpha" => cfg.alpha = num()?,
                "u_max" => cfg.u_max = num()?,
                "eps_cut" => cfg.eps_cut = num()?,
                "c" => cfg.c = num()?,
                "scale" => cfg.scale = num()?,
                "horizon" => cfg.horizon = num()?,
                "seed" => cfg.seed = v.parse().map_err(|_| csv(kv))?,
                "weight" => {
                    cfg.weight = match v {
                        "linear" => WeightKind::Linear,
                        "quadratic" => WeightKind::Quadratic,
                        _ => return Err(csv(kv)),
                    }
                }
                "c_eff" => c_eff = Some(num()?),
                _ => return Err(csv(kv)),
            }
        }
        let header = lines.next().ok_or_else(|| csv("missing column header"))??;
        if header.trim() != "t,u" {
            return Err(csv("unexpected column header"));
        }
        let mut jumps = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (t, u) = line.split_once(',').ok_or_else(|| csv(&line))?;
            jumps.push(Jump {
                t: t.trim().parse().map_err(|_| csv(&line))?,
                u: u.trim().parse().map_err(|_| csv(&line))?,
            });
        }
        cfg.validate()?;
        NoisePath::from_jumps(cfg, c_eff.ok_or_else(|| csv("missing c_eff"))?, jumps)
    }
}

/// Draw one jump magnitude by inverting the truncated power-law CDF.
fn sample_magnitude<R: Rng>(rng: &mut R, cfg: &NoiseConfig) -> f64 {
    let lo = cfg.eps_cut.powf(-cfg.alpha);
    let hi = cfg.u_max.powf(-cfg.alpha);
    let p: f64 = rng.random();
    (lo - p * (lo - hi)).powf(-1.0 / cfg.alpha).clamp(cfg.eps_cut, cfg.u_max)
}

/// Fill `out` with the jumps of one path on `[0, horizon]`, sorted by time.
pub fn sample_jumps<R: Rng>(rng: &mut R, cfg: &NoiseConfig, horizon: f64, out: &mut Vec<Jump>) {
    out.clear();
    let mean = cfg.jump_rate() * horizon;
    if !(mean > 0.0) {
        return;
    }
    let count = match Poisson::new(mean) {
        Ok(p) => p.sample(rng) as usize,
        Err(_) => return,
    };
    for _ in 0..count {
        let t = rng.random::<f64>() * horizon;
        let v = sample_magnitude(rng, cfg);
        let u = if rng.random::<bool>() { v } else { -v };
        out.push(Jump { t, u });
    }
    out.sort_unstable_by(|a, b| a.t.total_cmp(&b.t));
    // a repeated time has probability zero; drop it to keep times strict
    out.dedup_by(|b, a| b.t <= a.t);
}

/// Sample one path on `[0, horizon]`, deterministic in `cfg.seed`.
pub fn sample_path(cfg: &NoiseConfig) -> Result<NoisePath, NoiseError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut jumps = Vec::new();
    sample_jumps(&mut rng, cfg, cfg.horizon, &mut jumps);
    Ok(NoisePath {
        jumps,
        c_eff: cfg.effective_drift(),
        config: cfg.clone(),
    })
}

/// Values of the jump weight and its derived functions at one jump size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightValues {
    pub rho: f64,
    pub rho_prime: f64,
    pub rho_second: f64,
    /// `g = (σϱ)'/σ`.
    pub g: f64,
    pub g_prime: f64,
}

/// The weight `ϱ(u) = u^k ψ(|u|)` (k = 1 or 2) with a C² bump `ψ` that
/// rises from 0 at `eps_cut` to 1 at `2·eps_cut`, stays 1 up to `u_max/2`
/// and falls back to 0 at `u_max` (quintic smoothstep on both ramps), so
/// `σϱ` vanishes at every edge of the support.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpWeight {
    kind: WeightKind,
    alpha: f64,
    rise: (f64, f64),
    fall: (f64, f64),
    factor: f64,
}

fn smoothstep(s: f64) -> (f64, f64, f64) {
    let s2 = s * s;
    let one = 1.0 - s;
    (
        s2 * s * (10.0 - 15.0 * s + 6.0 * s2),
        30.0 * s2 * one * one,
        60.0 * s * one * (1.0 - 2.0 * s),
    )
}

impl JumpWeight {
    pub fn new(cfg: &NoiseConfig) -> JumpWeight {
        JumpWeight {
            kind: cfg.weight,
            alpha: cfg.alpha,
            rise: (cfg.eps_cut, 2.0 * cfg.eps_cut),
            fall: (0.5 * cfg.u_max, cfg.u_max),
            factor: 1.0,
        }
    }

    /// The same weight multiplied by a constant.
    pub fn scaled(self, factor: f64) -> JumpWeight {
        JumpWeight {
            factor: self.factor * factor,
            ..self
        }
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    /// Flat region `[lo, hi]` of the bump, in jump magnitude.
    pub fn flat_region(&self) -> (f64, f64) {
        (self.rise.1, self.fall.0)
    }

    fn bump(&self, v: f64) -> (f64, f64, f64) {
        let (a, b) = self.rise;
        let (c, d) = self.fall;
        if v <= a || v >= d {
            (0.0, 0.0, 0.0)
        } else if v < b {
            let w = b - a;
            let (s, s1, s2) = smoothstep((v - a) / w);
            (s, s1 / w, s2 / (w * w))
        } else if v <= c {
            (1.0, 0.0, 0.0)
        } else {
            let w = d - c;
            let (s, s1, s2) = smoothstep((d - v) / w);
            (s, -s1 / w, s2 / (w * w))
        }
    }

    /// All weight quantities at `u`; `u` must be nonzero.
    pub fn eval(&self, u: f64) -> WeightValues {
        let (psi, db, d2b) = self.bump(u.abs());
        let sgn = u.signum();
        let (psi1, psi2) = (db * sgn, d2b);
        let (rho, rho1, rho2) = match self.kind {
            WeightKind::Linear => (u * psi, psi + u * psi1, 2.0 * psi1 + u * psi2),
            WeightKind::Quadratic => (
                u * u * psi,
                2.0 * u * psi + u * u * psi1,
                2.0 * psi + 4.0 * u * psi1 + u * u * psi2,
            ),
        };
        let (rho, rho1, rho2) = (rho * self.factor, rho1 * self.factor, rho2 * self.factor);
        // σ'/σ = −(1+α)/u
        let k = 1.0 + self.alpha;
        WeightValues {
            rho,
            rho_prime: rho1,
            rho_second: rho2,
            g: rho1 - k * rho / u,
            g_prime: rho2 - k * (rho1 / u - rho / (u * u)),
        }
    }

    pub fn rho(&self, u: f64) -> Result<f64, NoiseError> {
        nonzero(u).map(|u| self.eval(u).rho)
    }

    pub fn rho_prime(&self, u: f64) -> Result<f64, NoiseError> {
        nonzero(u).map(|u| self.eval(u).rho_prime)
    }

    pub fn g(&self, u: f64) -> Result<f64, NoiseError> {
        nonzero(u).map(|u| self.eval(u).g)
    }
}

fn nonzero(u: f64) -> Result<f64, NoiseError> {
    if u == 0.0 {
        Err(NoiseError::ZeroJump)
    } else {
        Ok(u)
    }
}

pub fn rho(u: f64, cfg: &NoiseConfig) -> Result<f64, NoiseError> {
    cfg.weight().rho(u)
}

pub fn rho_prime(u: f64, cfg: &NoiseConfig) -> Result<f64, NoiseError> {
    cfg.weight().rho_prime(u)
}

pub fn g(u: f64, cfg: &NoiseConfig) -> Result<f64, NoiseError> {
    cfg.weight().g(u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: WeightKind) -> NoiseConfig {
        NoiseConfig {
            weight: kind,
            ..NoiseConfig::default()
        }
    }

    #[test]
    fn density_values() {
        let c = NoiseConfig::default();
        assert_eq!(levy_density(1.0, &c).unwrap(), 1.0);
        let v = levy_density(-0.5, &c).unwrap();
        assert!((v - 0.5f64.powf(-2.75)).abs() < 1e-12);
        assert!((v - 6.7272).abs() < 1e-4);
        assert_eq!(levy_density(1.5, &c).unwrap(), 0.0);
        assert_eq!(levy_density(-0.001, &c).unwrap(), 0.0);
        assert!(matches!(levy_density(0.0, &c), Err(NoiseError::ZeroJump)));
    }

    #[test]
    fn config_validation() {
        let ok = NoiseConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            NoiseConfig { alpha: 2.0, ..ok.clone() },
            NoiseConfig { alpha: 0.0, ..ok.clone() },
            NoiseConfig { eps_cut: 1.0, ..ok.clone() },
            NoiseConfig { eps_cut: 0.3, ..ok.clone() },
            NoiseConfig { eps_cut: 0.0, ..ok.clone() },
            NoiseConfig { horizon: -1.0, ..ok.clone() },
            NoiseConfig { scale: 0.0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn zero_horizon_has_no_jumps() {
        let c = NoiseConfig { horizon: 0.0, ..NoiseConfig::default() };
        assert!(sample_path(&c).unwrap().jumps().is_empty());
    }

    #[test]
    fn sampling_is_deterministic_and_within_support() {
        let c = NoiseConfig { horizon: 5.0, seed: 42, ..NoiseConfig::default() };
        let a = sample_path(&c).unwrap();
        let b = sample_path(&c).unwrap();
        assert_eq!(a, b);
        assert!(!a.jumps().is_empty());
        for w in a.jumps().windows(2) {
            assert!(w[0].t < w[1].t);
        }
        for j in a.jumps() {
            assert!(j.u.abs() >= c.eps_cut && j.u.abs() <= c.u_max);
            assert!((0.0..=c.horizon).contains(&j.t));
        }
        let other = sample_path(&c.with_seed(43)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn increments() {
        let c = NoiseConfig { horizon: 5.0, ..NoiseConfig::default() };
        let empty = NoisePath::from_jumps(c.clone(), 0.0, vec![]).unwrap();
        assert_eq!(empty.increment(0.0, 5.0).unwrap(), 0.0);

        let single = NoisePath::from_jumps(c.clone(), 0.0, vec![Jump { t: 2.0, u: 0.5 }]).unwrap();
        assert_eq!(single.increment(0.0, 3.0).unwrap(), 0.5);
        assert_eq!(single.increment(3.0, 5.0).unwrap(), 0.0);
        // the jump belongs to the interval that ends at its time
        assert_eq!(single.increment(0.0, 2.0).unwrap(), 0.5);
        assert_eq!(single.increment(2.0, 3.0).unwrap(), 0.0);
        assert!(single.increment(3.0, 6.0).is_err());
        assert!(single.increment(3.0, 2.0).is_err());

        let dyadic = NoisePath::from_jumps(
            c.clone(),
            0.25,
            vec![
                Jump { t: 0.5, u: 0.5 },
                Jump { t: 1.5, u: -0.25 },
                Jump { t: 4.0, u: 0.125 },
            ],
        )
        .unwrap();
        for t in [0.0, 0.5, 1.0, 2.0, 4.0, 5.0] {
            let split = dyadic.increment(0.0, t).unwrap() + dyadic.increment(t, 5.0).unwrap();
            assert_eq!(split, dyadic.increment(0.0, 5.0).unwrap());
        }

        let path = sample_path(&c.with_seed(9)).unwrap();
        let total = path.increment(0.0, 5.0).unwrap();
        for t in [0.3, 1.7, 4.99] {
            let split = path.increment(0.0, t).unwrap() + path.increment(t, 5.0).unwrap();
            assert!((split - total).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_on_flat_region() {
        let lin = cfg(WeightKind::Linear).weight();
        for u in [0.02, 0.3, -0.45, 0.5] {
            let w = lin.eval(u);
            assert!((w.rho - u).abs() < 1e-15);
            assert!((w.rho_prime - 1.0).abs() < 1e-15);
            assert!((w.g + 1.75).abs() < 1e-12);
            assert!(w.g_prime.abs() < 1e-12);
        }
        let quad = cfg(WeightKind::Quadratic).weight();
        for u in [0.02, 0.3, -0.45] {
            let w = quad.eval(u);
            assert!((w.rho - u * u).abs() < 1e-15);
            assert!((w.rho_prime - 2.0 * u).abs() < 1e-15);
            assert!((w.g - (1.0 - 1.75) * u).abs() < 1e-12);
            assert!((w.g_prime - (1.0 - 1.75)).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_vanishes_at_support_edges() {
        for kind in [WeightKind::Linear, WeightKind::Quadratic] {
            let c = cfg(kind);
            let w = c.weight();
            for u in [c.u_max, -c.u_max, c.eps_cut, -c.eps_cut] {
                let v = w.eval(u);
                assert_eq!(v.rho, 0.0);
                assert_eq!(v.rho_prime, 0.0);
                assert_eq!(v.rho_second, 0.0);
            }
            assert!(matches!(w.rho(0.0), Err(NoiseError::ZeroJump)));
        }
    }

    #[test]
    fn weight_derivatives_match_finite_differences() {
        // g = (σϱ)'/σ checked against a difference quotient of σϱ itself.
        for kind in [WeightKind::Linear, WeightKind::Quadratic] {
            let c = cfg(kind);
            let w = c.weight();
            let sigma_rho = |u: f64| levy_density(u, &c).unwrap() * w.eval(u).rho;
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..50 {
                let v = rng.random_range(c.eps_cut * 1.001..c.u_max * 0.999);
                let u = if rng.random::<bool>() { v } else { -v };
                let h = 1e-6 * v;
                let val = w.eval(u);
                let fd_rho1 = (w.eval(u + h).rho - w.eval(u - h).rho) / (2.0 * h);
                let fd_rho2 = (w.eval(u + h).rho_prime - w.eval(u - h).rho_prime) / (2.0 * h);
                let fd_g = (sigma_rho(u + h) - sigma_rho(u - h))
                    / (2.0 * h)
                    / levy_density(u, &c).unwrap();
                let fd_g1 = (w.eval(u + h).g - w.eval(u - h).g) / (2.0 * h);
                let tol = |x: f64| 1e-6 * (1.0 + x.abs());
                assert!((val.rho_prime - fd_rho1).abs() < tol(fd_rho1), "{u}");
                assert!((val.rho_second - fd_rho2).abs() < tol(fd_rho2) * 10.0, "{u}");
                assert!((val.g - fd_g).abs() < tol(fd_g), "{u}");
                assert!((val.g_prime - fd_g1).abs() < tol(fd_g1) * 10.0, "{u}");
            }
        }
    }

    #[test]
    fn jump_rate_closed_form() {
        let c = NoiseConfig::default();
        let expected = (2.0 / 1.75) * (0.01f64.powf(-1.75) - 1.0);
        assert!((c.jump_rate() - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn symmetric_noise_has_mean_zero() {
        let c = NoiseConfig { horizon: 1.0, scale: 0.0056, ..NoiseConfig::default() };
        let inc: Vec<f64> = (0..1000)
            .map(|s| sample_path(&c.with_seed(s)).unwrap().increment(0.0, 1.0).unwrap())
            .collect();
        let n = inc.len() as f64;
        let mean = inc.iter().sum::<f64>() / n;
        let var = inc.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 3.0 * (var / n).sqrt(), "{mean} {var}");
    }

    #[test]
    fn density_conditions() {
        let c = NoiseConfig::default();
        assert!(c.jump_variance_rate().is_finite() && c.jump_variance_rate() > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let u = rng.random_range(c.eps_cut..c.u_max);
            let s = levy_density(u, &c).unwrap();
            assert!(s > 0.0);
            let h = 1e-7 * u;
            let ds = (levy_density(u + h, &c).unwrap() - levy_density(u - h, &c).unwrap()) / (2.0 * h);
            assert!(ds.abs() <= (1.0 + c.alpha) * s / u * (1.0 + 1e-6));
        }
    }

    /// `∫ f` over `[a, b]` by Simpson's rule in `s = ln u`.
    fn log_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, steps: usize) -> f64 {
        let (la, lb) = (a.ln(), b.ln());
        let h = (lb - la) / steps as f64;
        let g = |s: f64| f(s.exp()) * s.exp();
        let mut sum = g(la) + g(lb);
        for i in 1..steps {
            sum += g(la + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        sum * h / 3.0
    }

    #[test]
    fn weight_integrates_to_zero_against_density() {
        for kind in [WeightKind::Linear, WeightKind::Quadratic] {
            let c = cfg(kind);
            let w = c.weight();
            let f = |u: f64| w.eval(u).g * levy_density(u, &c).unwrap();
            // breakpoints at the joints of the smooth ramps
            let knots = [c.eps_cut, 2.0 * c.eps_cut, 0.5 * c.u_max, c.u_max];
            // each half line integrates to zero on its own
            for sign in [1.0, -1.0] {
                let total: f64 = knots.windows(2).map(|k| log_simpson(|u| f(sign * u), k[0], k[1], 20_000)).sum();
                assert!(total.abs() < 1e-8, "{kind:?}: {total}");
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let c = NoiseConfig { horizon: 2.0, seed: 5, ..NoiseConfig::default() };
        let path = sample_path(&c).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let back = NoisePath::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, path);
    }
}
