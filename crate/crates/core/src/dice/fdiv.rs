use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Convex generator `f` of an f-divergence with `f(1) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FDivergence {
    /// `f(x) = (x - 1)^2 / 2`.
    #[default]
    ChiSquare,
    /// `f(x) = x log x - x + 1`.
    Kl,
}

impl FDivergence {
    pub fn f(self, x: f64) -> f64 {
        match self {
            Self::ChiSquare => 0.5 * (x - 1.0) * (x - 1.0),
            Self::Kl => {
                if x == 0.0 {
                    1.0
                } else {
                    x * x.ln() - x + 1.0
                }
            }
        }
    }

    pub fn f_prime(self, x: f64) -> f64 {
        match self {
            Self::ChiSquare => x - 1.0,
            Self::Kl => x.ln(),
        }
    }

    pub fn f_prime_inverse(self, y: f64) -> f64 {
        match self {
            Self::ChiSquare => y + 1.0,
            Self::Kl => y.exp(),
        }
    }

    pub fn f_second(self, x: f64) -> f64 {
        match self {
            Self::ChiSquare => 1.0,
            Self::Kl => 1.0 / x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::ChiSquare => "chi2",
            Self::Kl => "kl",
        }
    }

    /// `D_f(p || q) = sum_i q_i f(p_i / q_i)`, infinite when `p` leaves the
    /// support of `q`.
    pub fn divergence(self, p: &[f64], q: &[f64]) -> f64 {
        p.iter()
            .zip(q)
            .map(|(&pi, &qi)| {
                if qi > 0.0 {
                    qi * self.f(pi / qi)
                } else if pi > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            })
            .sum()
    }
}

impl fmt::Display for FDivergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FDivergence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "chi2" | "chi-square" => Ok(Self::ChiSquare),
            "kl" => Ok(Self::Kl),
            _ => Err(Error::InvalidArgument(format!("unknown f-divergence `{s}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_vanish_at_one() {
        for f in [FDivergence::ChiSquare, FDivergence::Kl] {
            assert_eq!(f.f(1.0), 0.0);
            assert_eq!(f.f_prime(1.0), 0.0);
        }
    }

    #[test]
    fn inverse_derivative_round_trips() {
        for f in [FDivergence::ChiSquare, FDivergence::Kl] {
            for i in 0..=600 {
                let x = 10f64.powf(-3.0 + i as f64 / 100.0);
                let back = f.f_prime_inverse(f.f_prime(x));
                assert!((back - x).abs() <= 1e-10 * x.max(1.0), "{f} at {x}");
            }
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("chi2".parse::<FDivergence>().unwrap(), FDivergence::ChiSquare);
        assert_eq!(FDivergence::Kl.to_string().parse::<FDivergence>().unwrap(), FDivergence::Kl);
        assert!("tv".parse::<FDivergence>().is_err());
    }
}
