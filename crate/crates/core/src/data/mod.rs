//! Synthetic world generation, context encoding, the pseudo-context
//! protocol, and the on-disk dataset format (plus ingestion of external
//! frame sequences).

pub mod context;
pub mod world;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use context::{encode_context, ClipContext, ContextLayout, ContextVector};
pub use world::{
    build_pseudo_cases, generate_clip, AlterationRule, AnomalyKind, ClipSpec, Dynamics,
    PseudoContextCase, SyntheticClip, WorldSchedule,
};

use crate::error::{Result, TrinityError};
use crate::flow::{read_flow_cache, write_flow_cache, FlowField, Image};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Pseudo,
    ContextFree,
}

impl SplitKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Pseudo => "pseudo",
            SplitKind::ContextFree => "context_free",
        }
    }

    pub fn parse(s: &str) -> Result<SplitKind> {
        Ok(match s {
            "train" => SplitKind::Train,
            "pseudo" => SplitKind::Pseudo,
            "context_free" => SplitKind::ContextFree,
            other => return Err(TrinityError::Config(format!("unknown split `{other}`"))),
        })
    }
}

#[derive(Clone, Debug)]
pub struct ClipRecord {
    pub id: String,
    pub split: SplitKind,
    pub context: ClipContext,
    pub frames: Vec<Image>,
    /// Ground-truth flow per consecutive frame pair; absent for
    /// ingested external data until a solver pass fills the cache.
    pub gt_flow: Option<Vec<FlowField>>,
    pub labels: Vec<u8>,
    pub kind: AnomalyKind,
}

#[derive(Debug)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub layout: ContextLayout,
    pub seed: u64,
    pub clips: Vec<ClipRecord>,
    pub pseudo_cases: Vec<PseudoContextCase>,
}

impl Dataset {
    pub fn split(&self, kind: SplitKind) -> Vec<&ClipRecord> {
        self.clips.iter().filter(|c| c.split == kind).collect()
    }

    pub fn clip(&self, id: &str) -> Option<&ClipRecord> {
        self.clips.iter().find(|c| c.id == id)
    }
}

// ── Generation ─────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct GenerateSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Frames per training clip (one model tube).
    pub train_frames: usize,
    pub train_clips: usize,
    /// Pseudo-protocol videos (normal, longer).
    pub pseudo_clips: usize,
    pub pseudo_frames: usize,
    /// Context-free test videos carrying unseen-motion windows.
    pub cfree_videos: usize,
    pub cfree_frames: usize,
    pub schedule: WorldSchedule,
}

impl Default for GenerateSpec {
    fn default() -> Self {
        GenerateSpec {
            seed: 42,
            width: 64,
            height: 64,
            train_frames: 4,
            train_clips: 400,
            pseudo_clips: 20,
            pseudo_frames: 40,
            cfree_videos: 12,
            cfree_frames: 48,
            schedule: WorldSchedule::default(),
        }
    }
}

/// Sample a training context. Half the draws are uniform over the week;
/// the other half target game-relevant hours so every dynamic regime is
/// well represented in a few hundred clips.
fn sample_train_context(rng: &mut ChaCha8Rng, schedule: &WorldSchedule) -> ClipContext {
    let day = rng.gen_range(0..7u8);
    let ctx = |hour| schedule.context_at(day, hour);
    if rng.gen_bool(0.5) {
        return ctx(rng.gen_range(0..24u8));
    }
    match schedule.game_pattern[day as usize] {
        Some(g) => {
            // Entering, during, exiting, and banner-morning hours.
            let lo = g.saturating_sub(4);
            let hi = (g + 4).min(23);
            ctx(rng.gen_range(lo..=hi))
        }
        None => ctx(rng.gen_range(7..23u8)),
    }
}

/// Build the contextual pseudo split: a counter-flow-heavy mix (six in
/// every ten cases reverse the expected direction) with schedule-only
/// (banner), presence, and absence alterations.
fn pseudo_plan(n: usize, schedule: &WorldSchedule) -> Vec<(ClipContext, AlterationRule, &'static str)> {
    let game_day = schedule
        .game_pattern
        .iter()
        .position(|g| g == &Some(14))
        .unwrap_or(1) as u8;
    let evening_game_day = schedule
        .game_pattern
        .iter()
        .position(|g| g == &Some(19))
        .unwrap_or(4) as u8;
    let plain_day = schedule
        .game_pattern
        .iter()
        .position(Option::is_none)
        .unwrap_or(0) as u8;
    let mut plan = Vec::with_capacity(n);
    for i in 0..n {
        let pick = [0, 1, 0, 1, 2, 0, 1, 3, 4, 2][i % 10];
        let item = match pick {
            // Exiting crowd re-labelled as during-game drift: the
            // expected direction flips (counter-flow style).
            0 => (
                schedule.context_at(game_day, 16),
                AlterationRule::ShiftHour(-2),
                "time_ahead_two_hours",
            ),
            // Night-game exit crowd with the game cancelled.
            1 => (
                schedule.context_at(evening_game_day, 22),
                AlterationRule::CancelGame,
                "cancel_game_schedule",
            ),
            // Banner morning: game-day scenery, normal motion; only the
            // appearance stream can notice the missing schedule.
            2 => (
                schedule.context_at(game_day, 10),
                AlterationRule::CancelGame,
                "non_game_day_morning",
            ),
            // Busy day clip re-labelled as night: presence mismatch.
            3 => (
                schedule.context_at(plain_day, 13),
                AlterationRule::SetHour(3),
                "presence_at_night",
            ),
            // Empty night clip re-labelled as midday: absence mismatch.
            _ => (
                schedule.context_at(plain_day, 2),
                AlterationRule::SetHour(13),
                "absence_at_noon",
            ),
        };
        plan.push(item);
    }
    plan
}

/// Generate the full dataset: training clips, the pseudo-context split
/// with its case table, and context-free test videos.
pub fn generate_dataset(spec: &GenerateSpec) -> Result<Dataset> {
    let mut clips = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let schedule = &spec.schedule;
    for i in 0..spec.train_clips {
        let context = sample_train_context(&mut rng, schedule);
        let clip = generate_clip(
            schedule,
            &ClipSpec {
                context,
                kind: AnomalyKind::None,
                num_frames: spec.train_frames,
                anomaly_frames: None,
                seed: spec.seed.wrapping_add(1000 + i as u64),
            },
            spec.width,
            spec.height,
        )?;
        clips.push(ClipRecord {
            id: format!("train_{i:04}"),
            split: SplitKind::Train,
            context,
            frames: clip.frames,
            gt_flow: Some(clip.gt_flow),
            labels: clip.labels,
            kind: AnomalyKind::None,
        });
    }

    let mut pseudo_cases = Vec::new();
    for (i, (context, rule, intent)) in pseudo_plan(spec.pseudo_clips, schedule)
        .into_iter()
        .enumerate()
    {
        let id = format!("pseudo_{i:04}");
        let clip = generate_clip(
            schedule,
            &ClipSpec {
                context,
                kind: AnomalyKind::None,
                num_frames: spec.pseudo_frames,
                anomaly_frames: None,
                seed: spec.seed.wrapping_add(50_000 + i as u64),
            },
            spec.width,
            spec.height,
        )?;
        let altered = rule.apply(&context).ok_or_else(|| {
            TrinityError::Config(format!("pseudo plan rule inapplicable for clip {id}"))
        })?;
        pseudo_cases.push(PseudoContextCase::new(id.clone(), context, altered, intent)?);
        clips.push(ClipRecord {
            id,
            split: SplitKind::Pseudo,
            context,
            frames: clip.frames,
            gt_flow: Some(clip.gt_flow),
            labels: clip.labels,
            kind: AnomalyKind::None,
        });
    }

    for i in 0..spec.cfree_videos {
        // Daytime scenes with an unseen-motion window in the middle.
        let context = schedule.context_at((i % 5) as u8, 13);
        let start = spec.cfree_frames / 3;
        let end = 2 * spec.cfree_frames / 3;
        let clip = generate_clip(
            schedule,
            &ClipSpec {
                context,
                kind: AnomalyKind::UnseenMotion,
                num_frames: spec.cfree_frames,
                anomaly_frames: Some((start, end)),
                seed: spec.seed.wrapping_add(90_000 + i as u64),
            },
            spec.width,
            spec.height,
        )?;
        clips.push(ClipRecord {
            id: format!("cfree_{i:04}"),
            split: SplitKind::ContextFree,
            context,
            frames: clip.frames,
            gt_flow: Some(clip.gt_flow),
            labels: clip.labels,
            kind: AnomalyKind::UnseenMotion,
        });
    }

    Ok(Dataset {
        height: spec.height,
        width: spec.width,
        layout: ContextLayout::default(),
        seed: spec.seed,
        clips,
        pseudo_cases,
    })
}

// ── Disk format ────────────────────────────────────────────────────

const FRAMES_MAGIC: &[u8; 8] = b"TRNFRMS1";
const MANIFEST_VERSION: &str = "trinity-dataset v1";

fn frames_path(id: &str) -> String {
    format!("clips/{id}.f32")
}

fn flow_path(id: &str) -> String {
    format!("clips/{id}.flow")
}

fn write_frames_file(path: &Path, frames: &[Image]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(FRAMES_MAGIC)?;
        let (h, ww) = frames
            .first()
            .map(|f| (f.height, f.width))
            .unwrap_or((0, 0));
        w.write_all(&(frames.len() as u32).to_le_bytes())?;
        w.write_all(&(h as u32).to_le_bytes())?;
        w.write_all(&(ww as u32).to_le_bytes())?;
        for f in frames {
            for &v in &f.data {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_frames_file(path: &Path) -> Result<Vec<Image>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut offset: u64 = 0;
    let mut take = |n: usize, what: &str, off: &mut u64| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf).map_err(|_| TrinityError::Format {
            path: path.to_path_buf(),
            detail: format!("truncated while reading {what}"),
            offset: *off,
        })?;
        *off += n as u64;
        Ok(buf)
    };
    let magic = take(8, "magic", &mut offset)?;
    if magic != FRAMES_MAGIC {
        return Err(TrinityError::Format {
            path: path.to_path_buf(),
            detail: "bad magic, not a frames file".into(),
            offset: 0,
        });
    }
    let t = u32::from_le_bytes(take(4, "frame count", &mut offset)?.try_into().unwrap());
    let h = u32::from_le_bytes(take(4, "height", &mut offset)?.try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(take(4, "width", &mut offset)?.try_into().unwrap()) as usize;
    let mut frames = Vec::with_capacity(t as usize);
    for _ in 0..t {
        let raw = take(h * w * 4, "frame payload", &mut offset)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        frames.push(Image {
            width: w,
            height: h,
            data,
        });
    }
    Ok(frames)
}

fn labels_string(labels: &[u8]) -> String {
    labels.iter().map(|&l| if l == 0 { '0' } else { '1' }).collect()
}

fn parse_labels(s: &str) -> Result<Vec<u8>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(0u8),
            '1' => Ok(1u8),
            other => Err(TrinityError::Config(format!("bad label char `{other}`"))),
        })
        .collect()
}

fn context_fields(ctx: &ClipContext) -> String {
    format!(
        "hour={} day={} game={}",
        ctx.hour,
        ctx.day,
        ctx.game_hour.map_or("none".to_string(), |g| g.to_string())
    )
}

fn parse_kv_tokens(line: &str) -> Vec<(String, String)> {
    line.split_whitespace()
        .filter_map(|tok| tok.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn field<'a>(tokens: &'a [(String, String)], key: &str, line: &str) -> Result<&'a str> {
    tokens
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| TrinityError::Config(format!("missing `{key}` in manifest line: {line}")))
}

fn parse_game(v: &str) -> Result<Option<u8>> {
    if v == "none" {
        Ok(None)
    } else {
        v.parse::<u8>()
            .map(Some)
            .map_err(|_| TrinityError::Config(format!("bad game hour `{v}`")))
    }
}

/// Write the dataset directory: a versioned key-value manifest plus
/// per-clip frame and flow files. Writes are per-clip atomic.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir.join("clips"))?;
    let mut manifest = String::new();
    manifest.push_str(MANIFEST_VERSION);
    manifest.push('\n');
    manifest.push_str(&format!("height = {}\n", ds.height));
    manifest.push_str(&format!("width = {}\n", ds.width));
    manifest.push_str(&format!("seed = {}\n", ds.seed));
    manifest.push_str(&format!("layout = {}\n", ds.layout.to_manifest_string()));
    for clip in &ds.clips {
        write_frames_file(&dir.join(frames_path(&clip.id)), &clip.frames)?;
        let mut line = format!(
            "clip = id={} split={} kind={} {} frames={} labels={}",
            clip.id,
            clip.split.as_str(),
            clip.kind.as_str(),
            context_fields(&clip.context),
            frames_path(&clip.id),
            labels_string(&clip.labels),
        );
        if let Some(flow) = &clip.gt_flow {
            write_flow_cache(&dir.join(flow_path(&clip.id)), flow)?;
            line.push_str(&format!(" flow={}", flow_path(&clip.id)));
        }
        manifest.push_str(&line);
        manifest.push('\n');
    }
    for case in &ds.pseudo_cases {
        manifest.push_str(&format!(
            "case = clip={} hour={} day={} game={} alt_hour={} alt_day={} alt_game={} intent={}\n",
            case.clip_id,
            case.original.hour,
            case.original.day,
            case.original.game_hour.map_or("none".into(), |g| g.to_string()),
            case.altered.hour,
            case.altered.day,
            case.altered.game_hour.map_or("none".into(), |g| g.to_string()),
            case.intent,
        ));
    }
    let tmp = dir.join("manifest.txt.tmp");
    fs::write(&tmp, manifest)?;
    fs::rename(tmp, dir.join("manifest.txt"))?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.txt");
    if !manifest_path.exists() {
        return Err(TrinityError::MissingArtifact {
            path: manifest_path,
            produced_by: "trinity generate".into(),
        });
    }
    let text = fs::read_to_string(&manifest_path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != MANIFEST_VERSION {
        return Err(TrinityError::Format {
            path: manifest_path,
            detail: format!("unsupported manifest header `{header}`"),
            offset: 0,
        });
    }
    let mut height = 0usize;
    let mut width = 0usize;
    let mut seed = 0u64;
    let mut layout = ContextLayout::default();
    let mut clips = Vec::new();
    let mut pseudo_cases = Vec::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(TrinityError::Config(format!("bad manifest line: {line}")));
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "height" => height = value.parse().map_err(|_| bad_num(value))?,
            "width" => width = value.parse().map_err(|_| bad_num(value))?,
            "seed" => seed = value.parse().map_err(|_| bad_num(value))?,
            "layout" => layout = ContextLayout::from_manifest_string(value)?,
            "clip" => {
                let tokens = parse_kv_tokens(value);
                let id = field(&tokens, "id", line)?.to_string();
                let split = SplitKind::parse(field(&tokens, "split", line)?)?;
                let kind = AnomalyKind::parse(field(&tokens, "kind", line)?)?;
                let context = ClipContext {
                    hour: field(&tokens, "hour", line)?.parse().map_err(|_| bad_num(line))?,
                    day: field(&tokens, "day", line)?.parse().map_err(|_| bad_num(line))?,
                    game_hour: parse_game(field(&tokens, "game", line)?)?,
                };
                let frames = read_frames_file(&dir.join(field(&tokens, "frames", line)?))?;
                let labels = parse_labels(field(&tokens, "labels", line)?)?;
                let gt_flow = match tokens.iter().find(|(k, _)| k == "flow") {
                    Some((_, p)) => Some(read_flow_cache(&dir.join(p))?),
                    None => None,
                };
                if labels.len() != frames.len() {
                    return Err(TrinityError::Contract(format!(
                        "clip {id}: {} labels for {} frames",
                        labels.len(),
                        frames.len()
                    )));
                }
                clips.push(ClipRecord {
                    id,
                    split,
                    context,
                    frames,
                    gt_flow,
                    labels,
                    kind,
                });
            }
            "case" => {
                let tokens = parse_kv_tokens(value);
                let original = ClipContext {
                    hour: field(&tokens, "hour", line)?.parse().map_err(|_| bad_num(line))?,
                    day: field(&tokens, "day", line)?.parse().map_err(|_| bad_num(line))?,
                    game_hour: parse_game(field(&tokens, "game", line)?)?,
                };
                let altered = ClipContext {
                    hour: field(&tokens, "alt_hour", line)?
                        .parse()
                        .map_err(|_| bad_num(line))?,
                    day: field(&tokens, "alt_day", line)?
                        .parse()
                        .map_err(|_| bad_num(line))?,
                    game_hour: parse_game(field(&tokens, "alt_game", line)?)?,
                };
                pseudo_cases.push(PseudoContextCase::new(
                    field(&tokens, "clip", line)?.to_string(),
                    original,
                    altered,
                    field(&tokens, "intent", line)?.to_string(),
                )?);
            }
            other => {
                return Err(TrinityError::Config(format!(
                    "unknown manifest key `{other}`"
                )))
            }
        }
    }
    Ok(Dataset {
        height,
        width,
        layout,
        seed,
        clips,
        pseudo_cases,
    })
}

fn bad_num(v: &str) -> TrinityError {
    TrinityError::Config(format!("bad numeric value `{v}` in manifest"))
}

// ── Ingestion of external frame sequences ──────────────────────────

/// Ingest a directory of raw clip files plus a context CSV into a
/// dataset directory. Each `<id>.gray` file is a headered raw frame
/// sequence (u32 T, H, W then float32 frames); the CSV rows are
/// `timestamp,hour,day,game_flag,game_hour[,labels]`. The frame
/// sampling gap keeps every `gap`-th frame.
pub fn ingest_directory(
    frames_dir: &Path,
    context_csv: &Path,
    gap: usize,
    split: SplitKind,
) -> Result<Dataset> {
    if gap == 0 {
        return Err(TrinityError::Config("sampling gap must be at least 1".into()));
    }
    let text = fs::read_to_string(context_csv)?;
    let mut clips = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("timestamp")) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() < 5 {
            return Err(TrinityError::Config(format!(
                "context CSV line {} needs timestamp,hour,day,game_flag,game_hour",
                lineno + 1
            )));
        }
        let id = cols[0].to_string();
        let hour: u8 = cols[1].parse().map_err(|_| bad_num(cols[1]))?;
        let day: u8 = cols[2].parse().map_err(|_| bad_num(cols[2]))?;
        let game_hour = parse_game(cols[4])?;
        let context = ClipContext { hour, day, game_hour };
        context.validate()?;
        let raw = read_raw_gray(&frames_dir.join(format!("{id}.gray")))?;
        let frames: Vec<Image> = raw.into_iter().step_by(gap).collect();
        let labels = if cols.len() > 5 && !cols[5].is_empty() {
            let all = parse_labels(cols[5])?;
            all.into_iter().step_by(gap).collect()
        } else {
            vec![0u8; frames.len()]
        };
        if labels.len() != frames.len() {
            return Err(TrinityError::Contract(format!(
                "clip {id}: {} labels for {} sampled frames",
                labels.len(),
                frames.len()
            )));
        }
        clips.push(ClipRecord {
            id,
            split,
            context,
            frames,
            gt_flow: None,
            labels,
            kind: AnomalyKind::None,
        });
    }
    if clips.is_empty() {
        return Err(TrinityError::Degenerate(
            "context CSV contains no clips".into(),
        ));
    }
    let (h, w) = (clips[0].frames[0].height, clips[0].frames[0].width);
    Ok(Dataset {
        height: h,
        width: w,
        layout: ContextLayout::default(),
        seed: 0,
        clips,
        pseudo_cases: Vec::new(),
    })
}

/// Raw grayscale clip file: u32 frame count, height, width, then
/// float32 little-endian frames. No magic; this is the exchange format
/// for external data.
pub fn read_raw_gray(path: &Path) -> Result<Vec<Image>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; 12];
    r.read_exact(&mut head).map_err(|_| TrinityError::Format {
        path: path.to_path_buf(),
        detail: "truncated raw header".into(),
        offset: 0,
    })?;
    let t = u32::from_le_bytes(head[0..4].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let mut frames = Vec::with_capacity(t);
    let mut offset = 12u64;
    for _ in 0..t {
        let mut raw = vec![0u8; h * w * 4];
        r.read_exact(&mut raw).map_err(|_| TrinityError::Format {
            path: path.to_path_buf(),
            detail: "truncated raw frame".into(),
            offset,
        })?;
        offset += (h * w * 4) as u64;
        frames.push(Image {
            width: w,
            height: h,
            data: raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
        });
    }
    Ok(frames)
}

pub fn write_raw_gray(path: &Path, frames: &[Image]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let (h, ww) = frames
        .first()
        .map(|f| (f.height, f.width))
        .unwrap_or((0, 0));
    w.write_all(&(frames.len() as u32).to_le_bytes())?;
    w.write_all(&(h as u32).to_le_bytes())?;
    w.write_all(&(ww as u32).to_le_bytes())?;
    for f in frames {
        for &v in &f.data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Path of a side-car solver flow cache used when ground-truth flow is
/// absent or disabled.
pub fn solver_cache_path(dir: &Path, clip_id: &str) -> PathBuf {
    dir.join(format!("clips/{clip_id}.solved.flow"))
}

/// Make sure every clip carries flow. With `force_solver`, ground-truth
/// flow is ignored and the TV-L1 solver runs instead, reading/writing
/// the per-clip cache under `dir` so later runs skip recomputation.
pub fn ensure_flows(
    ds: &mut Dataset,
    dir: Option<&Path>,
    solver: &crate::flow::SolverConfig,
    force_solver: bool,
) -> Result<()> {
    for clip in &mut ds.clips {
        if clip.gt_flow.is_some() && !force_solver {
            continue;
        }
        let cache = dir.map(|d| solver_cache_path(d, &clip.id));
        if let Some(cache) = &cache {
            if cache.exists() {
                clip.gt_flow = Some(read_flow_cache(cache)?);
                continue;
            }
        }
        let mut flows = Vec::with_capacity(clip.frames.len().saturating_sub(1));
        for pair in clip.frames.windows(2) {
            flows.push(crate::flow::compute_flow(&pair[0], &pair[1], solver)?);
        }
        if let Some(cache) = &cache {
            write_flow_cache(cache, &flows)?;
        }
        clip.gt_flow = Some(flows);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> GenerateSpec {
        GenerateSpec {
            seed: 11,
            train_clips: 6,
            pseudo_clips: 5,
            cfree_videos: 2,
            pseudo_frames: 8,
            cfree_frames: 9,
            ..GenerateSpec::default()
        }
    }

    #[test]
    fn dataset_roundtrip_is_bit_exact() {
        let ds = generate_dataset(&tiny_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.clips.len(), ds.clips.len());
        assert_eq!(back.pseudo_cases.len(), ds.pseudo_cases.len());
        for (a, b) in ds.clips.iter().zip(&back.clips) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.labels, b.labels);
            assert_eq!(a.context, b.context);
            for (fa, fb) in a.frames.iter().zip(&b.frames) {
                for (x, y) in fa.data.iter().zip(&fb.data) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
            let (fa, fb) = (a.gt_flow.as_ref().unwrap(), b.gt_flow.as_ref().unwrap());
            for (ga, gb) in fa.iter().zip(fb) {
                assert_eq!(ga.u, gb.u);
                assert_eq!(ga.v, gb.v);
            }
        }
        // And the manifest itself is byte-stable across rewrites.
        let m1 = fs::read(dir.path().join("manifest.txt")).unwrap();
        write_dataset(dir.path(), &back).unwrap();
        let m2 = fs::read(dir.path().join("manifest.txt")).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn corrupted_manifest_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("manifest.txt"), "not-a-manifest v9\n").unwrap();
        assert!(matches!(
            read_dataset(dir.path()),
            Err(TrinityError::Format { .. })
        ));
    }

    #[test]
    fn missing_manifest_names_generate() {
        let dir = tempfile::tempdir().unwrap();
        match read_dataset(dir.path()) {
            Err(TrinityError::MissingArtifact { produced_by, .. }) => {
                assert!(produced_by.contains("generate"));
            }
            other => panic!("expected missing artifact, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn pseudo_split_has_one_case_per_clip() {
        let ds = generate_dataset(&tiny_spec()).unwrap();
        let pseudo = ds.split(SplitKind::Pseudo);
        assert_eq!(pseudo.len(), 5);
        assert_eq!(ds.pseudo_cases.len(), 5);
        for case in &ds.pseudo_cases {
            assert!(ds.clip(&case.clip_id).is_some());
            assert_ne!(case.original, case.altered);
            // Normal clips only.
            assert_eq!(ds.clip(&case.clip_id).unwrap().kind, AnomalyKind::None);
        }
    }

    #[test]
    fn ingestion_applies_sampling_gap() {
        let dir = tempfile::tempdir().unwrap();
        let mut frames = Vec::new();
        for t in 0..8 {
            let mut img = Image::new(4, 4);
            for v in img.data.iter_mut() {
                *v = t as f64 / 10.0;
            }
            frames.push(img);
        }
        write_raw_gray(&dir.path().join("cam0.gray"), &frames).unwrap();
        fs::write(
            dir.path().join("contexts.csv"),
            "timestamp,hour,day,game_flag,game_hour\ncam0,10,0,0,none\n",
        )
        .unwrap();
        let ds = ingest_directory(
            dir.path(),
            &dir.path().join("contexts.csv"),
            4,
            SplitKind::Train,
        )
        .unwrap();
        assert_eq!(ds.clips.len(), 1);
        assert_eq!(ds.clips[0].frames.len(), 2); // frames 0 and 4
        assert!((ds.clips[0].frames[1].data[0] - 0.4).abs() < 1e-7);
        assert_eq!(ds.clips[0].context.hour, 10);
    }
}
