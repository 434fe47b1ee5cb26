//! Synthetic webcam world: a stadium-style scene whose crowd density,
//! motion direction, and static scenery follow a context schedule of
//! hour, day of week, and game times. Every clip is deterministic in
//! its seed, ships ground-truth flow, and can carry injected anomalies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::context::ClipContext;
use crate::error::{Result, TrinityError};
use crate::flow::{FlowField, Image};

/// Kinds of injected anomaly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnomalyKind {
    None,
    /// Agents present where the schedule expects none.
    Presence,
    /// No agents where the schedule expects a crowd.
    Absence,
    /// Motion direction reversed against the schedule.
    CounterFlow,
    /// Motion at triple the scheduled speed.
    Speed,
    /// Motion in a direction no training context produces.
    UnseenMotion,
}

impl AnomalyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AnomalyKind::None => "none",
            AnomalyKind::Presence => "presence",
            AnomalyKind::Absence => "absence",
            AnomalyKind::CounterFlow => "counter_flow",
            AnomalyKind::Speed => "speed",
            AnomalyKind::UnseenMotion => "unseen_motion",
        }
    }

    pub fn parse(s: &str) -> Result<AnomalyKind> {
        Ok(match s {
            "none" => AnomalyKind::None,
            "presence" => AnomalyKind::Presence,
            "absence" => AnomalyKind::Absence,
            "counter_flow" => AnomalyKind::CounterFlow,
            "speed" => AnomalyKind::Speed,
            "unseen_motion" => AnomalyKind::UnseenMotion,
            other => {
                return Err(TrinityError::Config(format!("unknown anomaly kind `{other}`")))
            }
        })
    }
}

/// Expected scene dynamics for one context cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dynamics {
    /// Expected agent count (Poisson mean).
    pub agent_count: f64,
    /// Dominant motion direction in degrees.
    pub direction_deg: f64,
    /// Speed in pixels per frame step.
    pub speed: f64,
    /// Static game-day scenery (set out around the scheduled game).
    pub banner: bool,
}

/// Context schedule: per (hour, day, game) expected counts, dominant
/// motion, and game-day scenery.
#[derive(Clone, Debug)]
pub struct WorldSchedule {
    pub seed: u64,
    pub weekday_count: f64,
    pub weekend_count: f64,
    pub evening_count: f64,
    pub game_count: f64,
    pub during_game_count: f64,
    pub slow_speed: f64,
    pub fast_speed: f64,
    /// Scheduled game start hour per day of week; `None` = no game.
    pub game_pattern: [Option<u8>; 7],
}

impl Default for WorldSchedule {
    fn default() -> Self {
        WorldSchedule {
            seed: 0,
            weekday_count: 8.0,
            weekend_count: 10.0,
            evening_count: 1.0,
            game_count: 8.0,
            during_game_count: 1.0,
            slow_speed: 1.0,
            fast_speed: 2.0,
            game_pattern: [
                None,
                Some(14),
                None,
                Some(14),
                Some(19),
                Some(14),
                Some(19),
            ],
        }
    }
}

impl WorldSchedule {
    /// Context for a timestamp under this schedule's game pattern.
    pub fn context_at(&self, day: u8, hour: u8) -> ClipContext {
        ClipContext {
            hour,
            day,
            game_hour: self.game_pattern[day as usize % 7],
        }
    }

    /// The normal dynamics implied by a context.
    pub fn dynamics(&self, ctx: &ClipContext) -> Dynamics {
        let banner = match ctx.game_hour {
            Some(g) => {
                let lo = g.saturating_sub(4);
                let hi = (g + 4).min(23);
                ctx.hour >= lo && ctx.hour <= hi
            }
            None => false,
        };
        if ctx.game_flag() {
            let g = ctx.game_hour.expect("flag implies a scheduled game");
            if ctx.hour < g {
                // Crowd entering before the game.
                return Dynamics {
                    agent_count: self.game_count,
                    direction_deg: 0.0,
                    speed: self.fast_speed,
                    banner,
                };
            }
            if ctx.hour <= g + 1 {
                // Sparse drift while the game is on.
                return Dynamics {
                    agent_count: self.during_game_count,
                    direction_deg: 0.0,
                    speed: self.slow_speed,
                    banner,
                };
            }
            // Crowd exiting after the game.
            return Dynamics {
                agent_count: self.game_count,
                direction_deg: 180.0,
                speed: self.fast_speed,
                banner,
            };
        }
        let night = ctx.hour >= 23 || ctx.hour < 7;
        if night {
            return Dynamics {
                agent_count: 0.0,
                direction_deg: 0.0,
                speed: self.slow_speed,
                banner,
            };
        }
        if ctx.hour >= 19 {
            return Dynamics {
                agent_count: self.evening_count,
                direction_deg: 0.0,
                speed: self.slow_speed,
                banner,
            };
        }
        let weekend = ctx.day >= 5;
        Dynamics {
            agent_count: if weekend { self.weekend_count } else { self.weekday_count },
            direction_deg: 0.0,
            speed: self.slow_speed,
            banner,
        }
    }
}

/// A generated clip: frames, ground-truth flow, its context, per-frame
/// labels and the anomaly kind used.
#[derive(Clone, Debug)]
pub struct SyntheticClip {
    pub frames: Vec<Image>,
    pub gt_flow: Vec<FlowField>,
    pub context: ClipContext,
    pub labels: Vec<u8>,
    pub kind: AnomalyKind,
    /// Number of agents sampled for this clip (generation metadata).
    pub agent_count: usize,
}

/// Generation request for one clip.
#[derive(Clone, Debug)]
pub struct ClipSpec {
    pub context: ClipContext,
    pub kind: AnomalyKind,
    pub num_frames: usize,
    /// Frame range `[start, end)` the anomaly occupies; `None` covers
    /// the whole clip.
    pub anomaly_frames: Option<(usize, usize)>,
    pub seed: u64,
}

struct Agent {
    x: f64,
    y: f64,
    amplitude: f64,
    sigma: f64,
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    let limit = (-lambda).exp();
    let mut k = 0usize;
    let mut p = 1.0;
    loop {
        p *= rng.gen::<f64>();
        if p <= limit {
            return k;
        }
        k += 1;
    }
}

fn apply_anomaly(base: Dynamics, kind: AnomalyKind, schedule: &WorldSchedule) -> Dynamics {
    match kind {
        AnomalyKind::None => base,
        AnomalyKind::Presence => Dynamics {
            agent_count: schedule.game_count,
            ..base
        },
        AnomalyKind::Absence => Dynamics {
            agent_count: 0.0,
            ..base
        },
        AnomalyKind::CounterFlow => Dynamics {
            direction_deg: (base.direction_deg + 180.0) % 360.0,
            ..base
        },
        AnomalyKind::Speed => Dynamics {
            speed: base.speed * 3.0,
            ..base
        },
        AnomalyKind::UnseenMotion => Dynamics {
            direction_deg: 90.0,
            ..base
        },
    }
}

const BACKGROUND_LEVEL: f64 = -0.92;
const BACKGROUND_TEXTURE: f64 = 0.06;
const BANNER_VALUE: f64 = 0.8;
const AGENT_MASS_CUTOFF: f64 = 0.08;

fn quantize_f32(v: f64) -> f64 {
    (v as f32) as f64
}

/// Unit vector for a direction, with axis-aligned angles snapped exact
/// so counter-flow is a literal negation of the normal flow.
fn unit_vector(deg: f64) -> (f64, f64) {
    let rad = deg.to_radians();
    let (mut x, mut y) = (rad.cos(), rad.sin());
    if x.abs() < 1e-12 {
        x = 0.0;
    }
    if y.abs() < 1e-12 {
        y = 0.0;
    }
    (x, y)
}

fn render_frame(
    width: usize,
    height: usize,
    agents: &[Agent],
    banner: bool,
    mass: &mut [f64],
) -> Image {
    let mut img = Image::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let tex = BACKGROUND_TEXTURE
                * (std::f64::consts::TAU * x as f64 / 16.0).sin()
                * (std::f64::consts::TAU * y as f64 / 16.0).sin();
            img.set(x, y, BACKGROUND_LEVEL + tex);
        }
    }
    if banner {
        let y0 = height * 11 / 16;
        let y1 = height * 15 / 16;
        let x0 = width / 16;
        let x1 = width * 15 / 16;
        for y in y0..y1 {
            for x in x0..x1 {
                img.set(x, y, BANNER_VALUE);
            }
        }
    }
    for m in mass.iter_mut() {
        *m = 0.0;
    }
    for a in agents {
        // Toroidal rendering keeps agent counts constant over a clip.
        let r = (3.0 * a.sigma).ceil() as isize;
        let cx = a.x.rem_euclid(width as f64);
        let cy = a.y.rem_euclid(height as f64);
        for dy in -r..=r {
            for dx in -r..=r {
                let px = (cx + dx as f64).rem_euclid(width as f64) as usize % width;
                let py = (cy + dy as f64).rem_euclid(height as f64) as usize % height;
                let fx = dx as f64 + cx.fract() - cx.fract().round();
                let fy = dy as f64 + cy.fract() - cy.fract().round();
                let g = a.amplitude * (-(fx * fx + fy * fy) / (2.0 * a.sigma * a.sigma)).exp();
                mass[py * width + px] += g;
            }
        }
    }
    for i in 0..mass.len() {
        img.data[i] = (img.data[i] + mass[i]).clamp(-1.0, 1.0);
        img.data[i] = quantize_f32(img.data[i]);
    }
    img
}

/// Render a clip for a context with an optional anomaly override.
/// Identical inputs produce bit-identical clips.
pub fn generate_clip(
    schedule: &WorldSchedule,
    spec: &ClipSpec,
    width: usize,
    height: usize,
) -> Result<SyntheticClip> {
    if spec.num_frames < 2 {
        return Err(TrinityError::Config(format!(
            "a clip needs at least 2 frames, got {}",
            spec.num_frames
        )));
    }
    if let Some((start, end)) = spec.anomaly_frames {
        if start >= end || end > spec.num_frames {
            return Err(TrinityError::Config(format!(
                "anomaly window {start}..{end} out of range for {} frames",
                spec.num_frames
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(
        schedule
            .seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(spec.seed),
    );
    let normal = schedule.dynamics(&spec.context);
    let anomalous = apply_anomaly(normal, spec.kind, schedule);
    let window = match spec.kind {
        AnomalyKind::None => None,
        _ => Some(spec.anomaly_frames.unwrap_or((0, spec.num_frames))),
    };
    // The agent count is fixed for the clip; count-type anomalies take
    // the anomalous count when their window covers frame 0.
    let count_dyn = match window {
        Some((0, _)) => anomalous,
        _ => normal,
    };
    let count = poisson(&mut rng, count_dyn.agent_count);
    let mut agents: Vec<Agent> = (0..count)
        .map(|_| Agent {
            x: rng.gen_range(0.0..width as f64),
            y: rng.gen_range(0.0..height as f64),
            amplitude: rng.gen_range(0.9..1.3),
            sigma: rng.gen_range(2.6..3.4),
        })
        .collect();
    let mut frames = Vec::with_capacity(spec.num_frames);
    let mut gt_flow = Vec::with_capacity(spec.num_frames - 1);
    let mut labels = vec![0u8; spec.num_frames];
    let mut mass = vec![0.0; width * height];
    for t in 0..spec.num_frames {
        let in_window = window.map(|(s, e)| t >= s && t < e).unwrap_or(false);
        if in_window {
            labels[t] = 1;
        }
        let dynamics = if in_window { anomalous } else { normal };
        let frame = render_frame(width, height, &agents, dynamics.banner, &mut mass);
        if t + 1 < spec.num_frames {
            // Ground-truth flow for the step t -> t+1 at pixels the
            // agents cover in frame t.
            let (dx, dy) = unit_vector(dynamics.direction_deg);
            let (vx, vy) = (dynamics.speed * dx, dynamics.speed * dy);
            let mut field = FlowField::zeros(width, height);
            for i in 0..mass.len() {
                if mass[i] > AGENT_MASS_CUTOFF {
                    field.u[i] = quantize_f32(vx);
                    field.v[i] = quantize_f32(vy);
                }
            }
            gt_flow.push(field);
            for a in &mut agents {
                a.x += vx;
                a.y += vy;
            }
        }
        frames.push(frame);
    }
    Ok(SyntheticClip {
        frames,
        gt_flow,
        context: spec.context,
        labels,
        kind: spec.kind,
        agent_count: count,
    })
}

/// Pseudo-contextual anomaly case: one normal clip evaluated under its
/// true context (all-normal labels) and an altered context
/// (all-anomalous labels).
#[derive(Clone, Debug)]
pub struct PseudoContextCase {
    pub clip_id: String,
    pub original: ClipContext,
    pub altered: ClipContext,
    pub intent: String,
}

impl PseudoContextCase {
    pub fn new(
        clip_id: impl Into<String>,
        original: ClipContext,
        altered: ClipContext,
        intent: impl Into<String>,
    ) -> Result<PseudoContextCase> {
        if original == altered {
            return Err(TrinityError::Contract(
                "pseudo case rejected: altered context equals the original".into(),
            ));
        }
        Ok(PseudoContextCase {
            clip_id: clip_id.into(),
            original,
            altered,
            intent: intent.into(),
        })
    }
}

/// Context alteration rules, tried in order until one applies.
#[derive(Clone, Debug)]
pub enum AlterationRule {
    /// Drop a scheduled game ("day game morning -> non-game day morning").
    CancelGame,
    /// Schedule a game at the given hour on a context without one.
    AddGame(u8),
    /// Shift the hour of day by a signed amount (clamped to 0..=23).
    ShiftHour(i8),
    /// Replace the hour of day.
    SetHour(u8),
}

impl AlterationRule {
    /// The altered context, or `None` when the rule does not apply.
    pub fn apply(&self, ctx: &ClipContext) -> Option<ClipContext> {
        match self {
            AlterationRule::CancelGame => ctx.game_hour.map(|_| ClipContext {
                game_hour: None,
                ..*ctx
            }),
            AlterationRule::AddGame(h) => match ctx.game_hour {
                Some(_) => None,
                None => Some(ClipContext {
                    game_hour: Some(*h),
                    ..*ctx
                }),
            },
            AlterationRule::ShiftHour(delta) => {
                let hour = (ctx.hour as i16 + *delta as i16).clamp(0, 23) as u8;
                (hour != ctx.hour).then_some(ClipContext { hour, ..*ctx })
            }
            AlterationRule::SetHour(hour) => {
                (*hour != ctx.hour).then_some(ClipContext { hour: *hour, ..*ctx })
            }
        }
    }

    fn intent(&self) -> String {
        match self {
            AlterationRule::CancelGame => "cancel_game".into(),
            AlterationRule::AddGame(h) => format!("add_game_{h}"),
            AlterationRule::ShiftHour(d) => format!("shift_hour_{d}"),
            AlterationRule::SetHour(h) => format!("set_hour_{h}"),
        }
    }
}

/// Build pseudo-context cases from normal clips using an alteration
/// table. Every clip must be matched by some rule.
pub fn build_pseudo_cases(
    clips: &[(String, ClipContext)],
    table: &[AlterationRule],
) -> Result<Vec<PseudoContextCase>> {
    let mut cases = Vec::with_capacity(clips.len());
    for (id, ctx) in clips {
        let mut found = None;
        for rule in table {
            if let Some(altered) = rule.apply(ctx) {
                found = Some(PseudoContextCase::new(
                    id.clone(),
                    *ctx,
                    altered,
                    rule.intent(),
                )?);
                break;
            }
        }
        match found {
            Some(case) => cases.push(case),
            None => {
                return Err(TrinityError::Degenerate(format!(
                    "no alteration rule applies to clip {id}"
                )))
            }
        }
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule() -> WorldSchedule {
        WorldSchedule::default()
    }

    #[test]
    fn empty_night_scene_has_no_agents_and_zero_flow() {
        let s = schedule();
        let ctx = ClipContext {
            hour: 3,
            day: 0,
            game_hour: None,
        };
        let clip = generate_clip(
            &s,
            &ClipSpec {
                context: ctx,
                kind: AnomalyKind::None,
                num_frames: 4,
                anomaly_frames: None,
                seed: 7,
            },
            64,
            64,
        )
        .unwrap();
        for f in &clip.gt_flow {
            assert!(f.u.iter().all(|&u| u == 0.0));
            assert!(f.v.iter().all(|&v| v == 0.0));
        }
        // Frames carry only the static background.
        assert!(clip.frames[0].data.iter().all(|&v| v < -0.5));
    }

    #[test]
    fn counter_flow_negates_ground_truth_direction() {
        let s = schedule();
        let ctx = s.context_at(1, 12); // entering before a 14:00 game
        assert!(ctx.game_flag());
        let base = ClipSpec {
            context: ctx,
            kind: AnomalyKind::None,
            num_frames: 3,
            anomaly_frames: None,
            seed: 21,
        };
        let normal = generate_clip(&s, &base, 64, 64).unwrap();
        let counter = generate_clip(
            &s,
            &ClipSpec {
                kind: AnomalyKind::CounterFlow,
                ..base
            },
            64,
            64,
        )
        .unwrap();
        let nf = &normal.gt_flow[0];
        let cf = &counter.gt_flow[0];
        let moving = nf.u.iter().filter(|&&u| u != 0.0).count();
        assert!(moving > 0, "normal clip should contain motion");
        for i in 0..nf.u.len() {
            assert_eq!(nf.u[i], -cf.u[i]);
            assert_eq!(nf.v[i], -cf.v[i]);
        }
        assert!(counter.labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let s = schedule();
        let spec = ClipSpec {
            context: s.context_at(5, 13),
            kind: AnomalyKind::None,
            num_frames: 4,
            anomaly_frames: None,
            seed: 99,
        };
        let a = generate_clip(&s, &spec, 64, 64).unwrap();
        let b = generate_clip(&s, &spec, 64, 64).unwrap();
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.data, fb.data);
        }
        for (ga, gb) in a.gt_flow.iter().zip(&b.gt_flow) {
            assert_eq!(ga.u, gb.u);
            assert_eq!(ga.v, gb.v);
        }
    }

    #[test]
    fn anomaly_window_marks_labels() {
        let s = schedule();
        let clip = generate_clip(
            &s,
            &ClipSpec {
                context: s.context_at(0, 10),
                kind: AnomalyKind::UnseenMotion,
                num_frames: 10,
                anomaly_frames: Some((4, 8)),
                seed: 3,
            },
            64,
            64,
        )
        .unwrap();
        assert_eq!(clip.labels, vec![0, 0, 0, 0, 1, 1, 1, 1, 0, 0]);
    }

    #[test]
    fn mean_count_tracks_schedule_within_ten_percent() {
        let s = schedule();
        // Two cells: busy entering (flag on) and weekday daytime.
        for (day, hour, lambda) in [(1u8, 12u8, s.game_count), (0, 13, s.weekday_count)] {
            let ctx = s.context_at(day, hour);
            let mut total = 0.0;
            let n = 150;
            for i in 0..n {
                let clip = generate_clip(
                    &s,
                    &ClipSpec {
                        context: ctx,
                        kind: AnomalyKind::None,
                        num_frames: 2,
                        anomaly_frames: None,
                        seed: 10_000 + i,
                    },
                    32,
                    32,
                )
                .unwrap();
                total += clip.agent_count as f64;
            }
            let mean = total / n as f64;
            assert!(
                (mean - lambda).abs() <= 0.1 * lambda.max(1.0),
                "cell ({day},{hour}): mean {mean} vs lambda {lambda}"
            );
        }
    }

    #[test]
    fn unknown_kind_string_is_config_error() {
        assert!(matches!(
            AnomalyKind::parse("meteor"),
            Err(TrinityError::Config(_))
        ));
    }

    #[test]
    fn pseudo_case_rejects_identity_alteration() {
        let ctx = ClipContext {
            hour: 10,
            day: 4,
            game_hour: Some(14),
        };
        assert!(PseudoContextCase::new("c0", ctx, ctx, "noop").is_err());
    }

    #[test]
    fn alteration_table_mirrors_schedule_changes() {
        // Day-game morning -> non-game day morning.
        let morning = ClipContext {
            hour: 10,
            day: 4,
            game_hour: Some(14),
        };
        let cases = build_pseudo_cases(
            &[("c0".into(), morning)],
            &[AlterationRule::CancelGame],
        )
        .unwrap();
        assert_eq!(cases[0].altered.game_hour, None);
        assert_eq!(cases[0].altered.hour, 10);

        // During a day game -> time moved two hours earlier.
        let during = ClipContext {
            hour: 16,
            day: 4,
            game_hour: Some(14),
        };
        let cases =
            build_pseudo_cases(&[("c1".into(), during)], &[AlterationRule::ShiftHour(-2)])
                .unwrap();
        assert_eq!(cases[0].altered.hour, 14);
        assert_eq!(cases[0].altered.game_hour, Some(14));

        // Non-game day -> game starts at 14:00.
        let plain = ClipContext {
            hour: 13,
            day: 0,
            game_hour: None,
        };
        let cases =
            build_pseudo_cases(&[("c2".into(), plain)], &[AlterationRule::AddGame(14)]).unwrap();
        assert_eq!(cases[0].altered.game_hour, Some(14));
        assert!(cases[0].altered.game_flag());
    }

    #[test]
    fn each_case_yields_two_runs() {
        let s = schedule();
        let clips: Vec<(String, ClipContext)> = (0..5)
            .map(|i| (format!("p{i}"), s.context_at(1, 12)))
            .collect();
        let cases = build_pseudo_cases(&clips, &[AlterationRule::CancelGame]).unwrap();
        assert_eq!(cases.len(), 5);
        // Protocol definition: n cases pool into n all-normal and n
        // all-anomalous runs; the runner enforces this shape.
        for c in &cases {
            assert_ne!(c.original, c.altered);
        }
    }
}
