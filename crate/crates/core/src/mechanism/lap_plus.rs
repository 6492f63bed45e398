use rand::Rng;

use crate::error::MechanismError;

/// Integer noise centred on `floor(m)`: the value `floor(m) + k` has probability
/// proportional to `exp(-eps |k| / 2)` for `k >= -floor(m)`, so draws are never negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LapPlus {
    center: u64,
    epsilon: f64,
    /// `exp(-eps / 2)`
    q: f64,
    ln_q: f64,
    /// Probability of the centre value.
    norm: f64,
}

impl LapPlus {
    pub fn new(m: f64, epsilon: f64) -> Result<Self, MechanismError> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(MechanismError::NonPositiveEpsilon(epsilon));
        }
        if !(m > 0.0) || !m.is_finite() {
            return Err(MechanismError::InvalidParameter(format!("Lap+ centre must be positive, got {m}")));
        }
        let center = m.floor() as u64;
        let ln_q = -epsilon / 2.0;
        let q = ln_q.exp();
        // sum over k >= -F of q^|k| = (1 + q - q^(F+1)) / (1 - q)
        let tail = (ln_q * (center as f64 + 1.0)).exp();
        let norm = -ln_q.exp_m1() / (1.0 + q - tail);
        Ok(Self { center, epsilon, q, ln_q, norm })
    }

    pub fn center(&self) -> u64 {
        self.center
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn pmf(&self, value: i64) -> f64 {
        if value < 0 {
            return 0.0;
        }
        let k = value as f64 - self.center as f64;
        self.norm * (self.ln_q * k.abs()).exp()
    }

    /// Exact draw by CDF inversion: one uniform picks the region (below, at, or above
    /// the centre) and is rescaled to invert the geometric tail inside that region.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        let one_minus_q = -self.ln_q.exp_m1();
        let f = self.center as f64;
        let low_mass = self.norm * self.q * (1.0 - (self.ln_q * f).exp()) / one_minus_q;
        let below_center = low_mass;
        let through_center = low_mass + self.norm;
        let clamp_unit = |v: f64| v.clamp(0.0, 1.0 - f64::EPSILON);

        if u < below_center {
            // distance d = F - value in 1..=F, P(d) proportional to q^(d-1), truncated at F
            let v = clamp_unit((below_center - u) / low_mass);
            let trunc = 1.0 - (self.ln_q * f).exp();
            let d = ((1.0 - v * trunc).ln() / self.ln_q).floor() + 1.0;
            let d = (d as u64).clamp(1, self.center);
            self.center - d
        } else if u < through_center {
            self.center
        } else {
            let upper_mass = 1.0 - through_center;
            let v = if upper_mass > 0.0 { clamp_unit((u - through_center) / upper_mass) } else { 0.0 };
            let k = ((-v).ln_1p() / self.ln_q).floor() + 1.0;
            self.center.saturating_add((k.max(1.0)) as u64)
        }
    }

    /// `value,probability` rows for values `0..=upto`, with a header line.
    pub fn table_csv(&self, upto: u64) -> String {
        let mut out = String::from("value,probability\n");
        for v in 0..=upto {
            out.push_str(&format!("{v},{:.12e}\n", self.pmf(v as i64)));
        }
        out
    }
}

pub fn lap_plus_pmf(m: f64, epsilon: f64, value: i64) -> Result<f64, MechanismError> {
    Ok(LapPlus::new(m, epsilon)?.pmf(value))
}

pub fn sample_lap_plus<R: Rng + ?Sized>(m: f64, epsilon: f64, rng: &mut R) -> Result<u64, MechanismError> {
    Ok(LapPlus::new(m, epsilon)?.sample(rng))
}
