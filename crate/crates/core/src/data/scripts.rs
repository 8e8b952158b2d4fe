//! Command scripts that excite the commanded-velocity plane.

use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Control, ControlBounds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptKind {
    /// Random set-points held for 0.5–2 s, smoothed by a 0.3 s low-pass.
    PseudoRandom,
    /// Straight passes joined by alternating 180° turns.
    Lawnmower,
    /// Constant speed, sinusoidal turn rate with period `duration / 4`.
    FigureEight,
    /// Monotone speed ramps from rest to the limit, each followed by a turn.
    SpeedSweep,
}

impl FromStr for ScriptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pseudo_random" => Ok(Self::PseudoRandom),
            "lawnmower" => Ok(Self::Lawnmower),
            "figure_eight" => Ok(Self::FigureEight),
            "speed_sweep" => Ok(Self::SpeedSweep),
            other => Err(Error::InvalidParameter(format!("unknown command script '{other}'"))),
        }
    }
}

/// Number of ramp/turn cycles in a speed sweep.
pub const SWEEP_CYCLES: usize = 4;
/// Fraction of each sweep cycle spent ramping.
pub const SWEEP_RAMP_FRACTION: f64 = 0.7;

/// Generates `round(duration / dt)` commands of the requested kind.
pub fn command_script_library(
    kind: ScriptKind,
    duration: f64,
    dt: f64,
    seed: u64,
    bounds: &ControlBounds,
) -> Result<Vec<Control>> {
    if !(duration > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "duration and dt must be positive (got {duration}, {dt})"
        )));
    }
    let n = (duration / dt).round().max(1.0) as usize;
    let (vmax, wmax) = (bounds.max_v, bounds.max_omega);
    let t = |k: usize| k as f64 * dt;
    let out = match kind {
        ScriptKind::PseudoRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let beta = 1.0 - (-dt / 0.3f64).exp();
            let mut target = Control::ZERO;
            let mut hold_until = 0.0;
            let mut cmd = Control::ZERO;
            (0..n)
                .map(|k| {
                    if t(k) >= hold_until {
                        target = Control::new(rng.gen_range(-0.2..1.0) * vmax, rng.gen_range(-1.0..1.0) * wmax);
                        hold_until = t(k) + rng.gen_range(0.5..2.0);
                    }
                    cmd.v_ref += beta * (target.v_ref - cmd.v_ref);
                    cmd.omega_ref += beta * (target.omega_ref - cmd.omega_ref);
                    cmd
                })
                .collect()
        }
        ScriptKind::Lawnmower => {
            let w = 0.5 * wmax;
            let turn = PI / w;
            let straight = 5.0;
            let period = straight + turn;
            (0..n)
                .map(|k| {
                    let cycle = (t(k) / period).floor();
                    let phase = t(k) - cycle * period;
                    let v = 0.6 * vmax;
                    if phase < straight {
                        Control::new(v, 0.0)
                    } else {
                        let sign = if cycle as i64 % 2 == 0 { 1.0 } else { -1.0 };
                        Control::new(v, sign * w)
                    }
                })
                .collect()
        }
        ScriptKind::FigureEight => {
            let period = duration / 4.0;
            (0..n)
                .map(|k| Control::new(0.5 * vmax, 0.6 * wmax * (TAU * t(k) / period).sin()))
                .collect()
        }
        ScriptKind::SpeedSweep => {
            let cycle_len = duration / SWEEP_CYCLES as f64;
            let ramp_len = SWEEP_RAMP_FRACTION * cycle_len;
            (0..n)
                .map(|k| {
                    let cycle = ((t(k) / cycle_len).floor() as usize).min(SWEEP_CYCLES - 1);
                    let phase = t(k) - cycle as f64 * cycle_len;
                    if phase < ramp_len {
                        Control::new(vmax * (phase / ramp_len).min(1.0), 0.0)
                    } else {
                        let sign = if cycle.is_multiple_of(2) { 1.0 } else { -1.0 };
                        let level = (cycle + 1) as f64 / SWEEP_CYCLES as f64;
                        Control::new(vmax, sign * 0.75 * wmax * level)
                    }
                })
                .collect()
        }
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const B: ControlBounds = ControlBounds {
        max_v: 1.5,
        max_omega: 2.5,
    };

    #[test]
    fn unknown_name() {
        assert!("spiral".parse::<ScriptKind>().is_err());
        assert_eq!("figure_eight".parse::<ScriptKind>().unwrap(), ScriptKind::FigureEight);
    }

    #[test]
    fn pseudo_random_is_deterministic_and_bounded() {
        let a = command_script_library(ScriptKind::PseudoRandom, 60.0, 0.1, 7, &B).unwrap();
        let b = command_script_library(ScriptKind::PseudoRandom, 60.0, 0.1, 7, &B).unwrap();
        let c = command_script_library(ScriptKind::PseudoRandom, 60.0, 0.1, 8, &B).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 600);
        assert!(a.iter().all(|u| u.validate(&B).is_ok()));
    }

    #[test]
    fn speed_sweep_ramps_are_monotone() {
        let dt = 0.1;
        let duration = 80.0;
        let cmds = command_script_library(ScriptKind::SpeedSweep, duration, dt, 0, &B).unwrap();
        let cycle = (duration / dt) as usize / SWEEP_CYCLES;
        let ramp = (SWEEP_RAMP_FRACTION * cycle as f64) as usize;
        let mut turned = false;
        for c in 0..SWEEP_CYCLES {
            let seg = &cmds[c * cycle..c * cycle + ramp];
            assert_eq!(seg[0].v_ref, 0.0);
            assert!(seg.windows(2).all(|w| w[1].v_ref >= w[0].v_ref));
            assert!(seg.iter().all(|u| u.omega_ref == 0.0));
            turned |= cmds[c * cycle + ramp + 1].omega_ref != 0.0;
        }
        assert!(turned);
        let vmax = cmds.iter().map(|u| u.v_ref).fold(0.0, f64::max);
        assert!((vmax - B.max_v).abs() < 1e-12);
    }

    #[test]
    fn figure_eight_alternates_with_quarter_period() {
        let duration = 40.0;
        let dt = 0.1;
        let cmds = command_script_library(ScriptKind::FigureEight, duration, dt, 0, &B).unwrap();
        let period = ((duration / 4.0) / dt).round() as usize;
        for k in [period / 4, period / 4 + 3, 2 * period + 10] {
            let a = cmds[k].omega_ref;
            let b = cmds[k + period / 2].omega_ref;
            assert!(a * b < 0.0, "k={k}: {a} {b}");
            assert!((cmds[k + period].omega_ref - a).abs() < 1e-9);
        }
    }

    #[test]
    fn lawnmower_alternates_turns() {
        let cmds = command_script_library(ScriptKind::Lawnmower, 60.0, 0.1, 0, &B).unwrap();
        let signs: Vec<f64> = cmds
            .iter()
            .filter(|u| u.omega_ref != 0.0)
            .map(|u| u.omega_ref.signum())
            .collect();
        let flips = signs.windows(2).filter(|w| w[0] != w[1]).count();
        assert!(flips >= 2);
    }
}
