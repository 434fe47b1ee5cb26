//! Context vectors: concatenated one-hot encodings of hour of day, day
//! of week, game indicator, and scheduled game hour.

use crate::error::{Result, TrinityError};

/// Hours before/after a scheduled game start during which the game
/// indicator is active.
pub const GAME_WINDOW_BEFORE: u8 = 2;
pub const GAME_WINDOW_AFTER: u8 = 3;

/// The raw context of a clip. The game indicator is derived from the
/// hour and the scheduled game, so altered contexts stay consistent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipContext {
    pub hour: u8,
    pub day: u8,
    /// Scheduled game start hour, if any. Hour 0 cannot host a game;
    /// the encoding reserves slot 0 for "no game".
    pub game_hour: Option<u8>,
}

impl ClipContext {
    /// Active within [game - 2h, game + 3h] of a scheduled start.
    pub fn game_flag(&self) -> bool {
        match self.game_hour {
            Some(g) => {
                let lo = g.saturating_sub(GAME_WINDOW_BEFORE);
                let hi = (g + GAME_WINDOW_AFTER).min(23);
                self.hour >= lo && self.hour <= hi
            }
            None => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hour > 23 {
            return Err(TrinityError::Contract(format!(
                "hour {} out of range 0..=23",
                self.hour
            )));
        }
        if self.day > 6 {
            return Err(TrinityError::Contract(format!(
                "day {} out of range 0..=6",
                self.day
            )));
        }
        if let Some(g) = self.game_hour {
            if g == 0 || g > 23 {
                return Err(TrinityError::Contract(format!(
                    "game hour {g} out of range 1..=23"
                )));
            }
        }
        Ok(())
    }
}

/// Widths of the one-hot segments, in encoding order. Each segment has
/// exactly one active bit; "off" states occupy a dedicated slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContextLayout {
    pub hour: usize,
    pub day: usize,
    pub flag: usize,
    pub game: usize,
}

impl Default for ContextLayout {
    fn default() -> Self {
        // 24 + 7 + 2 + 24: the flag is a two-slot one-hot so that every
        // segment carries exactly one active bit.
        ContextLayout {
            hour: 24,
            day: 7,
            flag: 2,
            game: 24,
        }
    }
}

impl ContextLayout {
    pub fn dim(&self) -> usize {
        self.hour + self.day + self.flag + self.game
    }

    pub fn to_manifest_string(&self) -> String {
        format!(
            "hour:{},day:{},flag:{},game:{}",
            self.hour, self.day, self.flag, self.game
        )
    }

    pub fn from_manifest_string(s: &str) -> Result<ContextLayout> {
        let mut layout = ContextLayout {
            hour: 0,
            day: 0,
            flag: 0,
            game: 0,
        };
        for part in s.split(',') {
            let (name, width) = part.split_once(':').ok_or_else(|| {
                TrinityError::Config(format!("bad layout segment `{part}`"))
            })?;
            let width: usize = width
                .parse()
                .map_err(|_| TrinityError::Config(format!("bad layout width `{width}`")))?;
            match name {
                "hour" => layout.hour = width,
                "day" => layout.day = width,
                "flag" => layout.flag = width,
                "game" => layout.game = width,
                other => {
                    return Err(TrinityError::Config(format!(
                        "unknown layout segment `{other}`"
                    )))
                }
            }
        }
        Ok(layout)
    }
}

/// A concatenated one-hot context encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextVector {
    pub bits: Vec<f64>,
}

impl ContextVector {
    pub fn dim(&self) -> usize {
        self.bits.len()
    }
}

/// Encode a context under a layout. The game indicator follows the
/// [-2h, +3h] window around the scheduled start.
pub fn encode_context(ctx: &ClipContext, layout: &ContextLayout) -> Result<ContextVector> {
    ctx.validate()?;
    if layout.hour != 24 || layout.day != 7 || layout.flag != 2 || layout.game != 24 {
        return Err(TrinityError::Config(format!(
            "unsupported context layout {layout:?}"
        )));
    }
    let mut bits = vec![0.0; layout.dim()];
    bits[ctx.hour as usize] = 1.0;
    bits[layout.hour + ctx.day as usize] = 1.0;
    let flag_base = layout.hour + layout.day;
    bits[flag_base + usize::from(ctx.game_flag())] = 1.0;
    let game_base = flag_base + layout.flag;
    bits[game_base + ctx.game_hour.unwrap_or(0) as usize] = 1.0;
    Ok(ContextVector { bits })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monday_morning_no_game() {
        let ctx = ClipContext {
            hour: 10,
            day: 0,
            game_hour: None,
        };
        let v = encode_context(&ctx, &ContextLayout::default()).unwrap();
        assert_eq!(v.dim(), 57);
        assert_eq!(v.bits[10], 1.0); // hour 10
        assert_eq!(v.bits[24], 1.0); // day 0
        assert_eq!(v.bits[24 + 7], 1.0); // flag off
        assert_eq!(v.bits[24 + 7 + 2], 1.0); // game slot 0 = none
        assert_eq!(v.bits.iter().sum::<f64>(), 4.0);
    }

    #[test]
    fn sixteen_hundred_with_fourteen_game_is_in_window() {
        let ctx = ClipContext {
            hour: 16,
            day: 2,
            game_hour: Some(14),
        };
        assert!(ctx.game_flag());
        let v = encode_context(&ctx, &ContextLayout::default()).unwrap();
        assert_eq!(v.bits[24 + 7 + 1], 1.0); // flag on
    }

    #[test]
    fn twenty_hundred_with_fourteen_game_is_outside_window() {
        // Window arithmetic oracle: the flag covers max(g-2,0)..=min(g+3,23);
        // for g = 14 that is 12..=17, so hour 20 is outside.
        let (g, hour) = (14u8, 20u8);
        let lo = g.saturating_sub(GAME_WINDOW_BEFORE);
        let hi = (g + GAME_WINDOW_AFTER).min(23);
        assert!(!(hour >= lo && hour <= hi));
        let ctx = ClipContext {
            hour,
            day: 2,
            game_hour: Some(g),
        };
        assert!(!ctx.game_flag());
        let v = encode_context(&ctx, &ContextLayout::default()).unwrap();
        assert_eq!(v.bits[24 + 7], 1.0); // flag off
        assert_eq!(v.bits[24 + 7 + 2 + 14], 1.0); // game slot 14 still set
    }

    #[test]
    fn every_segment_has_exactly_one_active_bit() {
        let layout = ContextLayout::default();
        for hour in [0u8, 7, 13, 23] {
            for game in [None, Some(9), Some(14)] {
                let ctx = ClipContext {
                    hour,
                    day: 3,
                    game_hour: game,
                };
                let v = encode_context(&ctx, &layout).unwrap();
                let segs = [
                    &v.bits[..24],
                    &v.bits[24..31],
                    &v.bits[31..33],
                    &v.bits[33..57],
                ];
                for seg in segs {
                    assert_eq!(seg.iter().sum::<f64>(), 1.0);
                }
            }
        }
    }

    #[test]
    fn layout_manifest_roundtrip() {
        let layout = ContextLayout::default();
        let s = layout.to_manifest_string();
        assert_eq!(ContextLayout::from_manifest_string(&s).unwrap(), layout);
    }

    #[test]
    fn invalid_fields_are_rejected() {
        assert!(ClipContext {
            hour: 24,
            day: 0,
            game_hour: None
        }
        .validate()
        .is_err());
        assert!(ClipContext {
            hour: 0,
            day: 7,
            game_hour: None
        }
        .validate()
        .is_err());
        assert!(ClipContext {
            hour: 0,
            day: 0,
            game_hour: Some(0)
        }
        .validate()
        .is_err());
    }
}
