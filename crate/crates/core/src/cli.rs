//! Command-line front end.
//!
//! Settings come from an optional JSON config file (`--config` or the
//! `ADDRFORGE_CONFIG` environment variable); flags override the file. Every
//! command that writes output also writes a manifest carrying the hash of its
//! resolved configuration and the seeds it used; a rerun whose hash matches
//! an existing manifest is skipped unless `--force` is given.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis;
use crate::error::{Error, Result};
use crate::eval::{self, AsdMode, Gazetteers, PredictionRecord};
use crate::geo_model::{self, CityIndex, IngestOptions};
use crate::grafting::{graft, GraftMode, GraftOutput, GraftSpec, DEFAULT_TARGET_SIDE};
use crate::jsonl;
use crate::labelgen::{self, AlignmentItem, EndpointConfig};
use crate::mock::{self, AnswerPools, ErrorModel, StubServer};
use crate::qa_forge::{self, sample_id, ForgeOptions, Profile, SampleRecord, Split};
use crate::raster;
use crate::seed::sha256_hex;
use crate::synth::{self, SynthCityConfig};
use crate::tiling::{self, AnnotationStyle, TileStore};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub locations: Option<PathBuf>,
    pub roads: Option<PathBuf>,
    pub tiles: Option<PathBuf>,
    pub city: Option<String>,
    pub zoom: Option<u8>,
    pub window_px: Option<u32>,
    pub annotate: Option<bool>,
    pub annotation: Option<AnnotationStyle>,
    pub delta: Option<f64>,
    pub wide_delta: Option<bool>,
    pub mode: Option<GraftMode>,
    pub target_side: Option<u32>,
    pub split: Option<[f64; 3]>,
    pub view_frac: Option<f64>,
    pub loc_frac: Option<f64>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub endpoint: Option<EndpointConfig>,
    pub error_model: Option<ErrorModel>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: FileConfig = jsonl::read_json(path)?;
        // relative paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.locations, &mut cfg.roads, &mut cfg.tiles].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(name = "addrforge", version, about = "Street-level address localization dataset forge and evaluator")]
pub struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true, env = "ADDRFORGE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Regenerate even when the output manifest matches the configuration.
    #[arg(long, global = true)]
    pub force: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read locations and roads into a city index.
    Ingest(IngestArgs),
    /// Cut and annotate a satellite window around every location.
    Tiles(TilesArgs),
    /// Compose satellite windows with street views.
    Graft(GraftArgs),
    /// Build address VQA conversations and splits.
    GenQa(GenQaArgs),
    /// Obtain alignment reasoning labels from a chat endpoint.
    GenLabels(GenLabelsArgs),
    /// Score predictions against a test set.
    Eval(EvalArgs),
    /// Street frequency tallies and overlays from repeated inferences.
    Analyze(AnalyzeArgs),
    /// Mock answerer, synthetic city and stub endpoint.
    #[command(subcommand)]
    Mock(MockCommand),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub locations: Option<PathBuf>,
    #[arg(long)]
    pub roads: Option<PathBuf>,
    #[arg(long)]
    pub city: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Trust dimensions in the records instead of opening every image.
    #[arg(long)]
    pub no_verify_images: bool,
}

#[derive(Debug, Args)]
pub struct AnnotateFlag {
    /// Draw street names on the satellite windows.
    #[arg(long, overrides_with = "no_annotate")]
    pub annotate: bool,
    /// Plain satellite windows.
    #[arg(long)]
    pub no_annotate: bool,
}

impl AnnotateFlag {
    fn get(&self) -> Option<bool> {
        if self.no_annotate {
            Some(false)
        } else if self.annotate {
            Some(true)
        } else {
            None
        }
    }
}

#[derive(Debug, Args)]
pub struct TilesArgs {
    /// City index written by `ingest`.
    #[arg(long)]
    pub index: PathBuf,
    /// Tile root holding `{z}/{x}/{y}.png`.
    #[arg(long)]
    pub tiles: Option<PathBuf>,
    #[arg(long)]
    pub zoom: Option<u8>,
    #[arg(long)]
    pub window_px: Option<u32>,
    #[command(flatten)]
    pub annotate: AnnotateFlag,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GraftArgs {
    /// Single satellite image (with --street).
    #[arg(long, requires = "street")]
    pub satellite: Option<PathBuf>,
    /// Single street-view image (with --satellite).
    #[arg(long, requires = "satellite")]
    pub street: Option<PathBuf>,
    /// City index, for batch mode with --windows.
    #[arg(long, conflicts_with = "satellite", requires = "windows")]
    pub index: Option<PathBuf>,
    /// Window directory written by `tiles`.
    #[arg(long)]
    pub windows: Option<PathBuf>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Admit delta above 0.5.
    #[arg(long)]
    pub wide_delta: bool,
    #[arg(long)]
    pub mode: Option<GraftMode>,
    #[arg(long)]
    pub target_side: Option<u32>,
    /// Output image (single mode) or directory (batch mode).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenQaArgs {
    /// City index; repeat to merge cities.
    #[arg(long, required = true)]
    pub index: Vec<PathBuf>,
    /// Additional city indexes to merge.
    #[arg(long)]
    pub merge: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Train/val/test fractions, e.g. 0.7,0.2,0.1.
    #[arg(long)]
    pub split: Option<String>,
    /// Profile for every split.
    #[arg(long, conflicts_with_all = ["train_profile", "eval_profile"])]
    pub profile: Option<Profile>,
    #[arg(long)]
    pub train_profile: Option<Profile>,
    /// Profile for val and test.
    #[arg(long)]
    pub eval_profile: Option<Profile>,
    /// Fraction of views kept per training location.
    #[arg(long)]
    pub view_frac: Option<f64>,
    /// Fraction of training locations kept.
    #[arg(long)]
    pub loc_frac: Option<f64>,
    /// External instruction data mixed into train.
    #[arg(long, requires = "mix_ratio")]
    pub mix_external: Option<PathBuf>,
    /// task:external, e.g. 1:1.
    #[arg(long, requires = "mix_external")]
    pub mix_ratio: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenLabelsArgs {
    /// Alignment items written by `graft`.
    #[arg(long)]
    pub items: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub retry_budget: Option<u32>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    pub api_key_env: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions JSONL `{id, turn, answer}`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth test JSONL.
    #[arg(long)]
    pub gt: PathBuf,
    /// City index supplying the gazetteers; defaults to names in the ground truth.
    #[arg(long)]
    pub index: Vec<PathBuf>,
    #[arg(long, default_value = "combined-turn")]
    pub asd_mode: AsdMode,
    /// Report JSON path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print a table per city.
    #[arg(long)]
    pub per_city: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Responses JSONL `{image_id, run, response}`.
    #[arg(long)]
    pub responses: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Also write list-selection prompts over each image's streets.
    #[arg(long)]
    pub choice_prompts: bool,
}

#[derive(Debug, Subcommand)]
pub enum MockCommand {
    /// Answer a test set with planted errors.
    Predict(MockPredictArgs),
    /// Write a synthetic city (tiles, roads, street views, locations).
    City(MockCityArgs),
    /// Serve the stub chat endpoint until interrupted.
    Serve(MockServeArgs),
}

#[derive(Debug, Args)]
pub struct MockPredictArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Error rate for every category.
    #[arg(long)]
    pub error_rate: Option<f64>,
    /// Per-category rate, e.g. street.judgment=1.0; repeatable.
    #[arg(long = "rate", value_parser = parse_rate)]
    pub rates: Vec<(String, f64)>,
}

#[derive(Debug, Args)]
pub struct MockCityArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "synth")]
    pub city: String,
    #[arg(long, default_value_t = 20)]
    pub locations: usize,
    #[arg(long, default_value_t = 4)]
    pub views: usize,
    #[arg(long, default_value_t = 17)]
    pub zoom: u8,
}

#[derive(Debug, Args)]
pub struct MockServeArgs {
    #[arg(long, default_value_t = 8089)]
    pub port: u16,
    #[arg(long, default_value_t = 0)]
    pub delay_ms: u64,
}

fn parse_rate(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected key=rate")?;
    let v: f64 = v.parse().map_err(|_| format!("bad rate {v:?}"))?;
    Ok((k.to_string(), v))
}

fn parse_fractions(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::invalid(format!("split {s:?} is not three comma-separated numbers")))?;
    parts
        .try_into()
        .map_err(|_| Error::invalid(format!("split {s:?} needs exactly three fractions")))
}

struct Ctx {
    file: FileConfig,
    seed: u64,
    force: bool,
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::File {
            path: path.to_path_buf(),
            msg: "not found".into(),
        })
    }
}

fn pick_path(flag: &Option<PathBuf>, file: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = flag
        .clone()
        .or_else(|| file.clone())
        .ok_or_else(|| Error::invalid(format!("--{what} is required (flag or config file)")))?;
    require(&p)?;
    Ok(p)
}

fn config_hash(command: &str, config: &Value, inputs: &[&Path]) -> Result<String> {
    let mut digests = Vec::new();
    for p in inputs {
        let digest = if p.is_file() {
            sha256_hex(&std::fs::read(p).map_err(|e| Error::io(*p, e))?)
        } else {
            String::new()
        };
        digests.push(json!([p.to_string_lossy(), digest]));
    }
    let doc = json!({"command": command, "config": config, "inputs": digests});
    Ok(sha256_hex(serde_json::to_string(&doc)?.as_bytes()))
}

fn up_to_date(manifest: &Path, hash: &str, force: bool) -> bool {
    if force {
        return false;
    }
    jsonl::read_json::<Value>(manifest)
        .ok()
        .and_then(|v| v["config_hash"].as_str().map(|h| h == hash))
        .unwrap_or(false)
}

fn write_manifest(path: &Path, command: &str, hash: &str, seed: u64, config: &Value, outputs: Value) -> Result<()> {
    jsonl::write_json(
        path,
        &json!({
            "command": command,
            "config_hash": hash,
            "seeds": {"global": seed},
            "config": config,
            "generated_at": chrono::Utc::now().to_rfc3339(),
            "outputs": outputs,
        }),
    )
}

fn sidecar_manifest(out: &Path) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}.manifest.json"))
}

/// File-system-safe form of an id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn load_index(path: &Path) -> Result<CityIndex> {
    require(path)?;
    jsonl::read_json(path)
}

fn skip_msg(out: &Path) {
    println!("{}: up to date (use --force to regenerate)", out.display());
}

fn cmd_ingest(ctx: &Ctx, a: &IngestArgs) -> Result<()> {
    let locations = pick_path(&a.locations, &ctx.file.locations, "locations")?;
    let roads = match a.roads.clone().or_else(|| ctx.file.roads.clone()) {
        Some(p) => {
            require(&p)?;
            Some(p)
        }
        None => None,
    };
    let city = a
        .city
        .clone()
        .or_else(|| ctx.file.city.clone())
        .unwrap_or_else(|| "city".into());
    let config = json!({"city": city, "verify_images": !a.no_verify_images});
    let mut inputs = vec![locations.as_path()];
    inputs.extend(roads.as_deref());
    let hash = config_hash("ingest", &config, &inputs)?;
    let manifest = a.out.join("manifest.json");
    if up_to_date(&manifest, &hash, ctx.force) {
        skip_msg(&a.out);
        return Ok(());
    }
    let mut index = geo_model::ingest_locations(
        &locations,
        &city,
        IngestOptions {
            verify_images: !a.no_verify_images,
        },
    )?;
    let mut skipped = (0, 0);
    if let Some(r) = &roads {
        let ri = geo_model::ingest_roads(r)?;
        skipped = (ri.skipped_unnamed, ri.skipped_geometry);
        if ri.warnings() > 0 {
            log::warn!(
                "{}: skipped {} unnamed and {} malformed road features",
                r.display(),
                ri.skipped_unnamed,
                ri.skipped_geometry
            );
        }
        index.roads = ri.roads;
    }
    jsonl::write_json(&a.out.join("index.json"), &index)?;
    let outputs = json!({
        "locations": index.locations.len(),
        "images": index.image_count(),
        "streets": index.streets.len(),
        "districts": index.districts.len(),
        "roads": index.roads.len(),
        "skipped_unnamed_roads": skipped.0,
        "skipped_malformed_roads": skipped.1,
    });
    write_manifest(&manifest, "ingest", &hash, ctx.seed, &config, outputs.clone())?;
    println!("{}", serde_json::to_string(&outputs)?);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowRecord {
    pub location_id: String,
    pub image: PathBuf,
    pub zoom: u8,
    pub origin: (i64, i64),
    pub window_px: u32,
    pub missing_tiles: usize,
    pub labels: Vec<String>,
}

fn cmd_tiles(ctx: &Ctx, a: &TilesArgs) -> Result<()> {
    let index = load_index(&a.index)?;
    let tiles = pick_path(&a.tiles, &ctx.file.tiles, "tiles")?;
    let zoom = a.zoom.or(ctx.file.zoom).unwrap_or(17);
    let window_px = a.window_px.or(ctx.file.window_px).unwrap_or(640);
    let mut style = ctx.file.annotation.clone().unwrap_or_default();
    style.enabled = a.annotate.get().or(ctx.file.annotate).unwrap_or(style.enabled);
    style.validate()?;
    let config = json!({"tiles": tiles, "zoom": zoom, "window_px": window_px, "annotation": style});
    let hash = config_hash("tiles", &config, &[&a.index])?;
    let manifest = a.out.join("manifest.json");
    if up_to_date(&manifest, &hash, ctx.force) {
        skip_msg(&a.out);
        return Ok(());
    }
    let store = TileStore::new(&tiles, zoom);
    let records = index
        .locations
        .par_iter()
        .map(|loc| {
            let win = tiling::assemble_window((loc.lon, loc.lat), zoom, window_px, &store)
                .map_err(|e| Error::invalid(format!("location {}: {e}", loc.id)))?;
            let ann = tiling::annotate_streets(&win, &index.roads, &style)?;
            let path = a.out.join(format!("{}.png", file_stem(&loc.id)));
            raster::save_rgb(&ann.image, &path)?;
            Ok(WindowRecord {
                location_id: loc.id.clone(),
                image: path,
                zoom,
                origin: win.origin,
                window_px,
                missing_tiles: win.missing_tiles,
                labels: ann.labels.into_iter().map(|l| l.name).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    jsonl::write(&a.out.join("windows.jsonl"), &records)?;
    let missing: usize = records.iter().map(|r| r.missing_tiles).sum();
    let outputs = json!({"windows": records.len(), "missing_tiles": missing});
    write_manifest(&manifest, "tiles", &hash, ctx.seed, &config, outputs.clone())?;
    println!("{}", serde_json::to_string(&outputs)?);
    Ok(())
}

fn graft_spec(ctx: &Ctx, a: &GraftArgs) -> Result<GraftSpec> {
    let mode = a.mode.or(ctx.file.mode).unwrap_or(GraftMode::Grafted);
    let delta = a.delta.or(ctx.file.delta).unwrap_or(0.5);
    let side = a.target_side.or(ctx.file.target_side).unwrap_or(DEFAULT_TARGET_SIDE);
    if a.wide_delta || ctx.file.wide_delta.unwrap_or(false) {
        GraftSpec::wide(mode, delta, side)
    } else {
        GraftSpec::new(mode, delta, side)
    }
}

fn fit_satellite(img: image::RgbImage, side: u32, path: &Path) -> Result<image::RgbImage> {
    if img.width() != img.height() {
        return Err(Error::File {
            path: path.to_path_buf(),
            msg: format!("satellite image is {}x{}, expected a square", img.width(), img.height()),
        });
    }
    Ok(if img.width() == side {
        img
    } else {
        raster::resize_box(&img, side, side)
    })
}

fn save_graft(out: GraftOutput, path: &Path) -> Result<Vec<PathBuf>> {
    match out {
        GraftOutput::Single(img) => {
            raster::save_rgb(&img, path)?;
            Ok(vec![path.to_path_buf()])
        }
        GraftOutput::Pair(sat, street) => {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy();
            let p1 = path.with_file_name(format!("{stem}_satellite.png"));
            let p2 = path.with_file_name(format!("{stem}_street.png"));
            raster::save_rgb(&sat, &p1)?;
            raster::save_rgb(&street, &p2)?;
            Ok(vec![p1, p2])
        }
    }
}

fn cmd_graft(ctx: &Ctx, a: &GraftArgs) -> Result<()> {
    let spec = graft_spec(ctx, a)?;
    let config = serde_json::to_value(spec)?;
    if let (Some(sat_p), Some(street_p)) = (&a.satellite, &a.street) {
        require(sat_p)?;
        require(street_p)?;
        let hash = config_hash("graft", &config, &[sat_p, street_p])?;
        let manifest = sidecar_manifest(&a.out);
        if up_to_date(&manifest, &hash, ctx.force) {
            skip_msg(&a.out);
            return Ok(());
        }
        let sat = fit_satellite(raster::load_rgb(sat_p)?, spec.target_side, sat_p)?;
        let street = raster::load_rgb(street_p)?;
        let written = save_graft(graft(&sat, &street, &spec)?, &a.out)?;
        write_manifest(&manifest, "graft", &hash, ctx.seed, &config, json!({"images": written}))?;
        println!("{}", written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join("\n"));
        return Ok(());
    }
    let (Some(index_p), Some(windows)) = (&a.index, &a.windows) else {
        return Err(Error::invalid("graft needs --satellite/--street or --index/--windows"));
    };
    let index = load_index(index_p)?;
    require(windows)?;
    let hash = config_hash("graft", &config, &[index_p, &windows.join("windows.jsonl")])?;
    let manifest = a.out.join("manifest.json");
    if up_to_date(&manifest, &hash, ctx.force) {
        skip_msg(&a.out);
        return Ok(());
    }
    if spec.mode == GraftMode::Separate {
        log::warn!("separate mode writes image pairs; no alignment items are emitted");
    }
    let items = index
        .locations
        .par_iter()
        .map(|loc| {
            let wp = windows.join(format!("{}.png", file_stem(&loc.id)));
            let sat = fit_satellite(raster::load_rgb(&wp)?, spec.target_side, &wp)?;
            let mut items = Vec::new();
            for v in &loc.views {
                let street = raster::load_rgb(&v.path)?;
                let tag = v.heading_tag();
                let out = a.out.join(format!("{}_h{tag}.png", file_stem(&loc.id)));
                let written = save_graft(graft(&sat, &street, &spec)?, &out)?;
                if spec.mode != GraftMode::Separate {
                    items.push(AlignmentItem {
                        id: sample_id(&index.city_id, &loc.id, &tag),
                        image: written[0].clone(),
                        label: loc.address.clone(),
                        city: index.city_id.clone(),
                        location_id: loc.id.clone(),
                        heading: v.heading,
                    });
                }
            }
            Ok(items)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    jsonl::write(&a.out.join("items.jsonl"), &items)?;
    let outputs = json!({"images": index.image_count(), "items": items.len()});
    write_manifest(&manifest, "graft", &hash, ctx.seed, &config, outputs.clone())?;
    println!("{}", serde_json::to_string(&outputs)?);
    Ok(())
}

fn cmd_gen_qa(ctx: &Ctx, a: &GenQaArgs) -> Result<()> {
    let paths: Vec<&PathBuf> = a.index.iter().chain(&a.merge).collect();
    for p in &paths {
        require(p)?;
    }
    let fractions = match &a.split {
        Some(s) => parse_fractions(s)?,
        None => ctx.file.split.unwrap_or([0.7, 0.2, 0.1]),
    };
    let (train_profile, eval_profile) = match a.profile {
        Some(p) => (p, p),
        None => (
            a.train_profile.unwrap_or(Profile::Train),
            a.eval_profile.unwrap_or(Profile::Test),
        ),
    };
    let view_frac = a.view_frac.or(ctx.file.view_frac).unwrap_or(1.0);
    let loc_frac = a.loc_frac.or(ctx.file.loc_frac).unwrap_or(1.0);
    let ratio = a.mix_ratio.as_deref().map(qa_forge::parse_ratio).transpose()?;
    if let Some(p) = &a.mix_external {
        require(p)?;
    }
    let config = json!({
        "split": fractions,
        "train_profile": train_profile,
        "eval_profile": eval_profile,
        "view_frac": view_frac,
        "loc_frac": loc_frac,
        "mix_ratio": ratio,
        "seed": ctx.seed,
    });
    let mut inputs: Vec<&Path> = paths.iter().map(|p| p.as_path()).collect();
    inputs.extend(a.mix_external.as_deref());
    let hash = config_hash("gen-qa", &config, &inputs)?;
    if up_to_date(&a.out.join("manifest.json"), &hash, ctx.force) {
        skip_msg(&a.out);
        return Ok(());
    }

    let opts = ForgeOptions {
        seed: ctx.seed,
        train_profile,
        eval_profile,
        ..Default::default()
    };
    let mut datasets = Vec::new();
    for p in &paths {
        let index = load_index(p)?;
        let split = qa_forge::split_locations(&index, fractions, ctx.seed)?;
        let (index, split) = qa_forge::downsample(&index, &split, view_frac, loc_frac, ctx.seed)?;
        jsonl::write_json(&a.out.join(format!("split_{}.json", file_stem(&index.city_id))), &split)?;
        datasets.push(qa_forge::forge_dataset(&index, &split, &opts)?);
    }
    let mut ds = qa_forge::merge_cities(datasets)?;
    if let (Some(ext), Some(ratio)) = (&a.mix_external, ratio) {
        let external: Vec<SampleRecord> = jsonl::read(ext)?;
        let train = ds.splits.remove(&Split::Train).unwrap_or_default();
        ds.splits
            .insert(Split::Train, qa_forge::mix_external(train, external, ratio, ctx.seed)?);
        ds.refresh_counts();
    }
    ds.manifest.config_hash = Some(hash);
    ds.manifest.config = config;
    ds.manifest.seeds.insert("global".into(), ctx.seed);
    qa_forge::write_dataset(&a.out, &ds)?;
    jsonl::write_json(&a.out.join("training_config.json"), &qa_forge::training_config())?;
    println!("{}", serde_json::to_string(&ds.manifest.counts)?);
    Ok(())
}

fn cmd_gen_labels(ctx: &Ctx, a: &GenLabelsArgs) -> Result<()> {
    require(&a.items)?;
    let mut ep = ctx.file.endpoint.clone().unwrap_or_default();
    if let Some(v) = &a.base_url {
        ep.base_url = v.clone();
    }
    if let Some(v) = &a.model {
        ep.model = v.clone();
    }
    if let Some(v) = a.temperature {
        ep.temperature = v;
    }
    if let Some(v) = a.max_in_flight {
        ep.max_in_flight = v;
    }
    if let Some(v) = a.retry_budget {
        ep.retry_budget = v;
    }
    if let Some(v) = a.timeout_secs {
        ep.timeout_secs = v;
    }
    ep.api_key = std::env::var(&a.api_key_env).ok();
    ep.validate()?;
    let items: Vec<AlignmentItem> = jsonl::read(&a.items)?;
    let config = serde_json::to_value(&ep)?;
    let hash = config_hash("gen-labels", &config, &[&a.items])?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Http(e.to_string()))?;
    let report = rt.block_on(labelgen::run_batch(&ep, &items, &a.out.join("audit.jsonl")))?;
    jsonl::write(&a.out.join("labels.jsonl"), &report.accepted)?;
    let stage1 = labelgen::stage1_samples(&items, &report.accepted);
    jsonl::write(&a.out.join("stage1.jsonl"), &stage1)?;
    let outputs = json!({
        "items": items.len(),
        "accepted": report.accepted.len(),
        "dropped": report.dropped,
        "failed": report.failed,
        "resumed": report.resumed,
        "regenerated": report.regenerated,
    });
    write_manifest(&a.out.join("manifest.json"), "gen-labels", &hash, ctx.seed, &config, outputs.clone())?;
    println!("{}", serde_json::to_string(&outputs)?);
    Ok(())
}

fn cmd_eval(_ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    require(&a.pred)?;
    require(&a.gt)?;
    let gt: Vec<SampleRecord> = jsonl::read(&a.gt)?;
    let preds: Vec<PredictionRecord> = jsonl::read(&a.pred)?;
    let gaz = if a.index.is_empty() {
        Gazetteers::from_samples(&gt)
    } else {
        let mut g = Gazetteers::default();
        for p in &a.index {
            let idx = load_index(p)?;
            for n in idx.streets.names() {
                g.streets.insert(n)?;
            }
            for n in idx.districts.names() {
                g.districts.insert(n)?;
            }
        }
        g
    };
    let ev = eval::evaluate(&gt, &preds, &gaz, a.asd_mode)?;
    print!("{}", eval::render_report(&ev.overall));
    if a.per_city || ev.per_city.len() > 1 {
        for (city, r) in &ev.per_city {
            println!("\n[{city}]");
            print!("{}", eval::render_report(r));
        }
    }
    if let Some(out) = &a.out {
        jsonl::write_json(out, &ev)?;
        let config = json!({"asd_mode": a.asd_mode});
        let hash = config_hash("eval", &config, &[&a.gt, &a.pred])?;
        write_manifest(&sidecar_manifest(out), "eval", &hash, 0, &config, json!({"questions": ev.overall.questions}))?;
    }
    Ok(())
}

/// Location id of a sample id `"{city}/{location}_h{heading}"`; other ids
/// are taken as location ids.
fn location_of(image_id: &str) -> &str {
    let rest = image_id.split_once('/').map_or(image_id, |(_, r)| r);
    rest.rsplit_once("_h").map_or(rest, |(l, _)| l)
}

fn cmd_analyze(ctx: &Ctx, a: &AnalyzeArgs) -> Result<()> {
    require(&a.responses)?;
    let index = load_index(&a.index)?;
    let config = json!({"k": a.k, "choice_prompts": a.choice_prompts});
    let hash = config_hash("analyze", &config, &[&a.responses, &a.index])?;
    let manifest = a.out.join("manifest.json");
    if up_to_date(&manifest, &hash, ctx.force) {
        skip_msg(&a.out);
        return Ok(());
    }
    let records: Vec<analysis::ResponseRecord> = jsonl::read(&a.responses)?;
    let maps = analysis::tally_by_image(&records, &index.streets);
    let mut overlays = 0;
    let mut prompts = Vec::new();
    for (id, freq) in &maps {
        match index.location(location_of(id)).or_else(|| index.location(id)) {
            Some(loc) => {
                let ov = analysis::emit_overlay(freq, &index.roads, loc, a.k)?;
                jsonl::write_json(&a.out.join(format!("{}.geojson", file_stem(id))), &ov.doc)?;
                overlays += 1;
            }
            None => log::warn!("no location for image {id}; overlay skipped"),
        }
        if a.choice_prompts && !freq.counts.is_empty() {
            let names: Vec<String> = analysis::topk(freq, usize::MAX).into_iter().map(|(n, _)| n).collect();
            let p = analysis::build_choice_prompt(&names)?;
            prompts.push(json!({"image_id": id, "prompt": p.text, "options": p.options}));
        }
    }
    analysis::write_frequency_csv(&a.out.join("frequencies.csv"), &maps)?;
    if a.choice_prompts {
        jsonl::write(&a.out.join("choice_prompts.jsonl"), &prompts)?;
    }
    let outputs = json!({"images": maps.len(), "overlays": overlays});
    write_manifest(&manifest, "analyze", &hash, ctx.seed, &config, outputs.clone())?;
    println!("{}", serde_json::to_string(&outputs)?);
    Ok(())
}

fn cmd_mock(ctx: &Ctx, m: &MockCommand) -> Result<()> {
    match m {
        MockCommand::Predict(a) => {
            require(&a.gt)?;
            let mut model = ctx.file.error_model.clone().unwrap_or_else(|| ErrorModel::uniform(0.0, 0));
            model.seed = ctx.seed;
            if let Some(r) = a.error_rate {
                model.default_rate = r;
            }
            for (k, v) in &a.rates {
                model.rates.insert(k.clone(), *v);
            }
            model.validate()?;
            let config = serde_json::to_value(&model)?;
            let hash = config_hash("mock-predict", &config, &[&a.gt])?;
            let manifest = sidecar_manifest(&a.out);
            if up_to_date(&manifest, &hash, ctx.force) {
                skip_msg(&a.out);
                return Ok(());
            }
            let gt: Vec<SampleRecord> = jsonl::read(&a.gt)?;
            let pools = AnswerPools::from_gazetteers(&Gazetteers::from_samples(&gt));
            let preds = mock::predict(&gt, &pools, &model)?;
            jsonl::write(&a.out, &preds)?;
            write_manifest(&manifest, "mock-predict", &hash, ctx.seed, &config, json!({"predictions": preds.len()}))?;
            println!("{} predictions", preds.len());
            Ok(())
        }
        MockCommand::City(a) => {
            let cfg = SynthCityConfig {
                city_id: a.city.clone(),
                n_locations: a.locations,
                views_per_location: a.views,
                zoom: a.zoom,
                seed: ctx.seed,
                ..Default::default()
            };
            let city = synth::write_synthetic_city(&a.out, &cfg)?;
            let config = json!({"city": a.city, "locations": a.locations, "views": a.views, "zoom": a.zoom});
            let hash = config_hash("mock-city", &config, &[])?;
            write_manifest(&a.out.join("manifest.json"), "mock-city", &hash, ctx.seed, &config, json!({"tiles": city.tile_count}))?;
            println!(
                "locations {}\nroads {}\ntiles {}",
                city.locations.display(),
                city.roads.display(),
                city.tiles.display()
            );
            Ok(())
        }
        MockCommand::Serve(a) => {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| Error::Http(e.to_string()))?;
            rt.block_on(async {
                let server = StubServer::bind(
                    &format!("127.0.0.1:{}", a.port),
                    mock::hint_reasoning_handler(),
                    Duration::from_millis(a.delay_ms),
                )
                .await?;
                println!("stub endpoint at {}/v1", server.base_url());
                tokio::signal::ctrl_c()
                    .await
                    .map_err(|e| Error::Http(e.to_string()))?;
                println!("served {} requests", server.requests());
                Ok(())
            })
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => {
            require(p)?;
            FileConfig::load(p)?
        }
        None => FileConfig::default(),
    };
    let ctx = Ctx {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        force: cli.force,
        file,
    };
    let jobs = cli.jobs.or(ctx.file.jobs).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Ingest(a) => cmd_ingest(&ctx, a),
        Command::Tiles(a) => cmd_tiles(&ctx, a),
        Command::Graft(a) => cmd_graft(&ctx, a),
        Command::GenQa(a) => cmd_gen_qa(&ctx, a),
        Command::GenLabels(a) => cmd_gen_labels(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Analyze(a) => cmd_analyze(&ctx, a),
        Command::Mock(m) => cmd_mock(&ctx, m),
    })
}

/// Exit status for a failed command: 2 for invalid arguments, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Invalid(_) | Error::OutOfRange(_) => 2,
        _ => 1,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } | Error::File { .. } | Error::Line { .. } | Error::Image { .. } => "io",
        Error::Invalid(_) => "invalid",
        Error::OutOfRange(_) => "out_of_range",
        Error::Http(_) => "http",
        Error::Json(_) => "json",
    }
}

/// Parses `argv`, runs the command and returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", json!({"error": error_kind(&e), "message": e.to_string()}));
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions_parse() {
        assert_eq!(parse_fractions("0.7,0.2,0.1").unwrap(), [0.7, 0.2, 0.1]);
        assert!(parse_fractions("0.7,0.3").is_err());
        assert!(parse_fractions("a,b,c").is_err());
    }

    #[test]
    fn location_from_sample_id() {
        assert_eq!(location_of("pitts/L001_h90"), "L001");
        assert_eq!(location_of("L001"), "L001");
    }

    #[test]
    fn unknown_flag_exits_2() {
        assert_eq!(run(["addrforge", "eval", "--bogus"]), 2);
        assert_eq!(run(["addrforge", "frobnicate"]), 2);
    }

    #[test]
    fn missing_input_exits_1() {
        assert_eq!(run(["addrforge", "eval", "--pred", "/nonexistent/p.jsonl", "--gt", "/nonexistent/t.jsonl"]), 1);
    }

    #[test]
    fn bad_delta_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("a.png");
        raster::save_rgb(&image::RgbImage::new(4, 4), &img).unwrap();
        let out = dir.path().join("o.png");
        let args = ["addrforge", "graft", "--satellite", img.to_str().unwrap(), "--street", img.to_str().unwrap(), "--delta", "0.7", "--out", out.to_str().unwrap()];
        assert_eq!(run(args), 2);
    }
}
