//! Pure scaling and self-termination rules shared by the provisioner, the
//! workers and the simulator.

use core::fmt;
use core::str::FromStr;
use core::time::Duration;

/// A non-negative rational number, used for the scaling factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    num: u64,
    den: u64,
}

const fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl Ratio {
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };
    pub const HALF: Ratio = Ratio { num: 1, den: 2 };

    pub const fn new(num: u64, den: u64) -> Ratio {
        assert!(den != 0, "zero denominator");
        // den != 0, so g >= 1.
        let g = gcd(num, den);
        Ratio { num: num / g, den: den / g }
    }

    pub fn num(self) -> u64 {
        self.num
    }

    pub fn den(self) -> u64 {
        self.den
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `ceil(self · x / div)` in exact integer arithmetic.
    pub fn ceil_mul_div(self, x: u64, div: u64) -> u64 {
        let n = self.num as u128 * x as u128;
        let d = self.den as u128 * div.max(1) as u128;
        n.div_ceil(d) as u64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid ratio `{0}`, expected e.g. `0.5` or `1/3`")]
pub struct RatioParseError(pub alloc::string::String);

impl FromStr for Ratio {
    type Err = RatioParseError;

    /// Accepts `a/b`, integers and plain decimals such as `0.25`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || RatioParseError(s.into());
        let s = s.trim();
        if let Some((a, b)) = s.split_once('/') {
            let a: u64 = a.trim().parse().map_err(|_| err())?;
            let b: u64 = b.trim().parse().map_err(|_| err())?;
            if b == 0 {
                return Err(err());
            }
            return Ok(Ratio::new(a, b));
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 18 || (int.is_empty() && frac.is_empty()) {
            return Err(err());
        }
        let digits = |t: &str| t.is_empty() || t.bytes().all(|c| c.is_ascii_digit());
        if !digits(int) || !digits(frac) {
            return Err(err());
        }
        let den = 10u64.pow(frac.len() as u32);
        let i: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| err())? };
        let f: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| err())? };
        let num = i.checked_mul(den).and_then(|v| v.checked_add(f)).ok_or_else(err)?;
        Ok(Ratio::new(num, den))
    }
}

/// Autoscaling parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingPolicy {
    pub sf: Ratio,
    pub pipeline_width: usize,
    pub period: Duration,
    pub startup_latency: Duration,
    pub max_workers: usize,
}

impl Default for ScalingPolicy {
    fn default() -> Self {
        Self {
            sf: Ratio::HALF,
            pipeline_width: 1,
            period: Duration::from_secs(1),
            startup_latency: Duration::from_secs(10),
            max_workers: 1024,
        }
    }
}

impl ScalingPolicy {
    /// Worker count the policy aims for at a given queue depth.
    pub fn target(&self, pending: usize) -> usize {
        self.sf.ceil_mul_div(pending as u64, self.pipeline_width as u64) as usize
    }
}

/// Workers to launch now: `ceil(sf·pending/width) − running − booting`,
/// clamped to zero and to the room left under `max_workers`.
pub fn desired_launches(pending: usize, running: usize, booting: usize, policy: &ScalingPolicy) -> usize {
    let live = running + booting;
    let want = policy.target(pending).saturating_sub(live);
    want.min(policy.max_workers.saturating_sub(live))
}

/// Worker lifetime limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lifetime {
    pub runtime_limit: Duration,
    pub idle_timeout: Duration,
}

/// True when a worker should stop taking work: it is within `headroom` of
/// its runtime limit, or it has been idle for the idle timeout.
pub fn should_self_terminate(life: &Lifetime, elapsed: Duration, idle: Duration, headroom: Duration) -> bool {
    elapsed >= life.runtime_limit.saturating_sub(headroom) || idle >= life.idle_timeout
}
