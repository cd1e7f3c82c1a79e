use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Applied current `I(t)` in amperes; positive is discharge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurrentProfile<T> {
    Constant {
        current: T,
    },
    /// `offset + amplitude * sin(angular_frequency * t)`.
    Sinusoidal {
        offset: T,
        amplitude: T,
        angular_frequency: T,
    },
    /// Piecewise-linear through `(times[k], currents[k])`, clamped at the ends.
    Tabulated {
        times: Vec<T>,
        currents: Vec<T>,
    },
}

impl<T: Real> CurrentProfile<T> {
    pub fn constant(current: T) -> Self {
        Self::Constant { current }
    }

    pub fn sinusoidal(offset: T, amplitude: T, angular_frequency: T) -> Self {
        Self::Sinusoidal {
            offset,
            amplitude,
            angular_frequency,
        }
    }

    pub fn tabulated(times: Vec<T>, currents: Vec<T>) -> Result<Self> {
        if times.is_empty() || times.len() != currents.len() {
            return Err(Error::Config {
                field: "profile".into(),
                constraint: "tabulated profile needs equally many (>= 1) times and currents".into(),
            });
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config {
                field: "profile".into(),
                constraint: "tabulated times must be strictly increasing".into(),
            });
        }
        Ok(Self::Tabulated { times, currents })
    }

    pub fn at(&self, t: T) -> T {
        match self {
            Self::Constant { current } => *current,
            Self::Sinusoidal {
                offset,
                amplitude,
                angular_frequency,
            } => *offset + *amplitude * (*angular_frequency * t).sin(),
            Self::Tabulated { times, currents } => {
                let n = times.len();
                if t <= times[0] {
                    return currents[0];
                }
                if t >= times[n - 1] {
                    return currents[n - 1];
                }
                // first index with times[k] > t
                let k = times.partition_point(|&s| s <= t);
                let (t0, t1) = (times[k - 1], times[k]);
                let w = (t - t0) / (t1 - t0);
                currents[k - 1] + w * (currents[k] - currents[k - 1])
            }
        }
    }

    pub fn cast<U: Real>(&self) -> CurrentProfile<U> {
        let f = |x: &T| U::lit(x.as_f64());
        match self {
            Self::Constant { current } => CurrentProfile::Constant { current: f(current) },
            Self::Sinusoidal {
                offset,
                amplitude,
                angular_frequency,
            } => CurrentProfile::Sinusoidal {
                offset: f(offset),
                amplitude: f(amplitude),
                angular_frequency: f(angular_frequency),
            },
            Self::Tabulated { times, currents } => CurrentProfile::Tabulated {
                times: times.iter().map(f).collect(),
                currents: currents.iter().map(f).collect(),
            },
        }
    }
}

/// Parses `constant:<A>` or `sinusoidal:<offset>,<amp>,<omega>`.
/// `file:<path>` is resolved by the harness, which owns file access.
impl<T: Real> FromStr for CurrentProfile<T> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Config {
            field: "profile".into(),
            constraint: format!("{msg} (got `{s}`)"),
        };
        let (kind, rest) = s.split_once(':').ok_or_else(|| bad("expected <kind>:<args>"))?;
        let nums = || -> Result<Vec<T>> {
            rest.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map(T::lit)
                        .map_err(|_| bad("non-numeric argument"))
                })
                .collect()
        };
        match kind {
            "constant" => match nums()?.as_slice() {
                [i] => Ok(Self::constant(*i)),
                _ => Err(bad("constant takes one value")),
            },
            "sinusoidal" => match nums()?.as_slice() {
                [o, a, w] => Ok(Self::sinusoidal(*o, *a, *w)),
                _ => Err(bad("sinusoidal takes offset,amplitude,omega")),
            },
            _ => Err(bad("unknown profile kind")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tabulated_interpolates_and_clamps() {
        let p = CurrentProfile::tabulated(vec![0.0, 10.0, 20.0], vec![1.0, 3.0, 2.0]).unwrap();
        assert_eq!(p.at(-5.0), 1.0);
        assert_eq!(p.at(5.0), 2.0);
        assert_eq!(p.at(10.0), 3.0);
        assert_eq!(p.at(15.0), 2.5);
        assert_eq!(p.at(100.0), 2.0);
    }

    #[test]
    fn tabulated_rejects_unsorted() {
        assert!(CurrentProfile::tabulated(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(CurrentProfile::<f64>::tabulated(vec![], vec![]).is_err());
    }

    #[test]
    fn parses_cli_forms() {
        let p: CurrentProfile<f64> = "sinusoidal:1.0,1.0,0.005".parse().unwrap();
        assert_eq!(p, CurrentProfile::sinusoidal(1.0, 1.0, 0.005));
        assert!((p.at(100.0) - (1.0 + 0.5f64.sin())).abs() < 1e-15);
        let p: CurrentProfile<f64> = "constant:1".parse().unwrap();
        assert_eq!(p.at(3.0), 1.0);
        assert!("pulse:1".parse::<CurrentProfile<f64>>().is_err());
        assert!("constant:1,2".parse::<CurrentProfile<f64>>().is_err());
    }
}
