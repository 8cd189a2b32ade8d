use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use orientrace::completion::{
    completion_field_h3, cubic_hermite, elastica_energy, extract_mode, heisenberg_energy_min,
    heisenberg_energy_quoted, CompletionSetup, FieldGrid, HPoint,
};
use orientrace::ctos::{ctos_track, scale_scores, CtosParams};
use orientrace::etos::{etos_track, EtosParams, NoStop, TrackPoint};
use orientrace::oscore::{reconstruct, reconstruct_approx, transform, OrientationScore};
use orientrace::phantom::{self, Scene};
use orientrace::raster::{
    load_image, load_mask, preprocess, relative_l2, save_gray8, Channel, Image2D, PreprocessParams,
};
use orientrace::vasculature::{
    build_vasculature_with_map, initial_edges, model_features, DiskParams, SeedOverride, VascParams,
};
use orientrace::wavelets::{
    build_cake_stack, build_gabor_stack, split_directional, CakeParams, GaborParams, StackParams,
    WaveletStack,
};
use orientrace::widths::{match_profiles, width_stats, TruthProfile};

use crate::doc::{ModelDocument, SegmentDoc};
use crate::overlay::{draw_model, Canvas};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WaveletArg {
    Cake,
    Gabor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SidedArg {
    Double,
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgoArg {
    Etos,
    Ctos,
}

fn parse_channel(s: &str) -> std::result::Result<Channel, String> {
    s.parse::<Channel>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "green", value_parser = parse_channel)]
    pub channel: Channel,
    #[arg(long, value_enum, default_value = "cake")]
    pub wavelet: WaveletArg,
    #[arg(long, default_value_t = 36)]
    pub orientations: usize,
    #[arg(long, default_value_t = 2)]
    pub spline_order: usize,
    #[arg(long, default_value_t = 60)]
    pub taylor_order: usize,
    #[arg(long, default_value_t = 0.8)]
    pub gamma: f64,
    /// Gabor dilation `a`.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Gabor anisotropy.
    #[arg(long, default_value_t = 4.0)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value = "double")]
    pub sided: SidedArg,
    /// Subtract the image mean before lifting (added back on reconstruction).
    #[arg(long)]
    pub remove_dc: bool,
    /// Output prefix; writes `<out>.bin` and `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parameters stored in a score header, enough to rebuild the stack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRecipe {
    pub stack: StackParams,
    pub sided: SidedArg,
    /// Constant removed from the image before lifting.
    pub offset: f64,
}

pub fn build_stack(recipe: &ScoreRecipe, w: usize, h: usize) -> Result<WaveletStack> {
    let double = match recipe.stack {
        StackParams::Cake(p) => build_cake_stack(&p, w, h)?,
        StackParams::Gabor(p) => build_gabor_stack(&p, w, h)?,
    };
    Ok(match recipe.sided {
        SidedArg::Double => double,
        SidedArg::Plus => split_directional(&double)?.0,
        SidedArg::Minus => split_directional(&double)?.1,
    })
}

pub fn cmd_score(a: &ScoreArgs) -> Result<()> {
    let img = load_image(&a.input, a.channel)?;
    let stack = match a.wavelet {
        WaveletArg::Cake => StackParams::Cake(CakeParams {
            n_orientations: a.orientations,
            spline_order: a.spline_order,
            taylor_order: a.taylor_order,
            gamma: a.gamma,
            ..CakeParams::default()
        }),
        WaveletArg::Gabor => StackParams::Gabor(GaborParams {
            epsilon: a.epsilon,
            scale: a.scale.unwrap_or(GaborParams::default().scale),
            n_orientations: a.orientations,
            ..GaborParams::default()
        }),
    };
    let offset = if a.remove_dc {
        img.masked_mean().unwrap_or(0.0)
    } else {
        0.0
    };
    let recipe = ScoreRecipe {
        stack,
        sided: a.sided,
        offset,
    };
    let st = build_stack(&recipe, img.width(), img.height())?;
    let f = img.map(|v| v - offset);
    let u = transform(&f, &st)?;
    u.export(&a.out, &serde_json::to_value(&recipe)?)?;
    eprintln!(
        "wrote {}x{}x{} score to {}",
        u.width,
        u.height,
        u.n_orientations(),
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Prefix of a score written by `score`.
    #[arg(long)]
    pub score: PathBuf,
    /// Original image; when given, the relative L2 error is printed.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "green", value_parser = parse_channel)]
    pub channel: Channel,
    /// Sum the layers instead of the exact inverse.
    #[arg(long)]
    pub approx: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn reconstruct_image(
    u: &OrientationScore,
    recipe: &ScoreRecipe,
    approx: bool,
) -> Result<Image2D> {
    let f = if approx {
        reconstruct_approx(u)
    } else {
        let st = build_stack(recipe, u.width, u.height)?;
        reconstruct(u, &st, true)?
    };
    Ok(f.map(|v| v + recipe.offset))
}

pub fn cmd_reconstruct(a: &ReconstructArgs) -> Result<()> {
    let (u, header) = OrientationScore::import(&a.score)?;
    let recipe: ScoreRecipe = serde_json::from_value(header.params)?;
    let f = reconstruct_image(&u, &recipe, a.approx)?;
    save_gray8(&f, &a.out)?;
    if let Some(p) = &a.input {
        let orig = load_image(p, a.channel)?;
        if orig.dims() != f.dims() {
            return Err(CliError::Usage(
                "input does not match the score size".into(),
            ));
        }
        println!(
            "relative L2 error: {:e}",
            relative_l2(f.data(), orig.data())
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedSpec {
    pub c: [f64; 2],
    #[serde(default)]
    pub u: Option<[f64; 2]>,
    #[serde(default)]
    pub v: Option<[f64; 2]>,
    pub theta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedFile {
    Wrapped {
        #[serde(default)]
        schema: Option<String>,
        seeds: Vec<SeedSpec>,
    },
    Bare(Vec<SeedSpec>),
}

impl SeedFile {
    pub fn seeds(self) -> Vec<SeedSpec> {
        match self {
            Self::Wrapped { seeds, .. } | Self::Bare(seeds) => seeds,
        }
    }
}

pub fn read_seeds(path: &Path) -> Result<Vec<SeedSpec>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read seed file: {e}")))?;
    let f: SeedFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("malformed seed file: {e}")))?;
    let seeds = f.seeds();
    if seeds
        .iter()
        .any(|s| !(s.c.iter().all(|v| v.is_finite()) && s.theta.is_finite()))
    {
        return Err(CliError::Usage("seed coordinates must be finite".into()));
    }
    Ok(seeds)
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "green", value_parser = parse_channel)]
    pub channel: Channel,
    #[arg(long, value_enum, default_value = "etos")]
    pub algo: AlgoArg,
    #[arg(long)]
    pub seeds: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub step: f64,
    #[arg(long, default_value_t = 20.0)]
    pub eta_max: f64,
    #[arg(long, default_value_t = 3.0)]
    pub envelope_sigma: f64,
    #[arg(long, default_value_t = 10)]
    pub history: usize,
    #[arg(long, default_value_t = 1000)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 36)]
    pub orientations: usize,
    /// Expected width used to place edges when a seed has none.
    #[arg(long, default_value_t = 8.0)]
    pub width_hint: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub overlay: Option<PathBuf>,
}

/// Double-sided and forward single-sided cake scores of `f`.
fn cake_scores(f: &Image2D, n_o: usize) -> Result<(OrientationScore, OrientationScore)> {
    let stack = build_cake_stack(
        &CakeParams {
            n_orientations: n_o,
            ..CakeParams::default()
        },
        f.width(),
        f.height(),
    )?;
    let (plus, _) = split_directional(&stack)?;
    Ok((transform(f, &stack)?, transform(f, &plus)?))
}

pub fn cmd_track(a: &TrackArgs) -> Result<()> {
    let seeds = read_seeds(&a.seeds)?;
    let img = load_image(&a.input, a.channel)?;
    let g = preprocess(&img, &PreprocessParams::default(), false)?;
    let mut doc;
    match a.algo {
        AlgoArg::Etos => {
            let p = EtosParams {
                step: a.step,
                eta_max: a.eta_max,
                sigma: a.envelope_sigma,
                history: a.history,
                max_steps: a.max_steps,
            };
            p.validate()?;
            doc = ModelDocument::new(
                serde_json::json!({"algo": "etos", "etos": p, "orientations": a.orientations}),
            );
            if seeds.is_empty() {
                return write_track_outputs(&doc, &img, a);
            }
            let (u, plus) = cake_scores(&g, a.orientations)?;
            for (i, s) in seeds.iter().enumerate() {
                let tp = match (s.u, s.v) {
                    (Some(u0), Some(v0)) => TrackPoint::from_edges(u0, v0, s.theta),
                    _ => initial_edges(
                        &plus,
                        s.c,
                        s.theta,
                        a.width_hint,
                        a.eta_max.max(2.0 * a.width_hint),
                    )
                    .unwrap_or_else(|| TrackPoint::from_center(s.c, s.theta, a.width_hint)),
                };
                let mut seg = etos_track(&u, tp, &p, &mut NoStop)?;
                seg.id = i as u32;
                doc.segments.push(SegmentDoc::from(&seg));
            }
        }
        AlgoArg::Ctos => {
            let p = CtosParams {
                step: a.step,
                eta_max: a.eta_max,
                max_steps: a.max_steps,
                ..CtosParams::default()
            };
            p.validate()?;
            doc = ModelDocument::new(
                serde_json::json!({"algo": "ctos", "ctos": p, "orientations": a.orientations}),
            );
            if seeds.is_empty() {
                return write_track_outputs(&doc, &img, a);
            }
            let scores = scale_scores(&g, &p, a.orientations)?;
            for (i, s) in seeds.iter().enumerate() {
                let mut seg = ctos_track(&scores, s.c, s.theta, &p, &mut NoStop)?;
                seg.id = i as u32;
                doc.segments.push(SegmentDoc::from(&seg));
            }
        }
    }
    write_track_outputs(&doc, &img, a)
}

fn write_track_outputs(doc: &ModelDocument, img: &Image2D, a: &TrackArgs) -> Result<()> {
    std::fs::write(&a.out, doc.to_json())?;
    if let Some(o) = &a.overlay {
        let mut c = Canvas::from_image(img);
        draw_model(&mut c, doc);
        c.save(o)?;
    }
    eprintln!("tracked {} segment(s)", doc.segments.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct VasculatureArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "green", value_parser = parse_channel)]
    pub channel: Channel,
    /// Field-of-view mask (nonzero = inside).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-point features CSV; segment and junction tables are written next
    /// to it with `_segments` and `_junctions` suffixes.
    #[arg(long)]
    pub features_out: Option<PathBuf>,
    /// Seeds to use instead of the optic-disk seeds.
    #[arg(long)]
    pub seed_file: Option<PathBuf>,
    /// Prior optic disk radius in pixels.
    #[arg(long)]
    pub disk_radius: Option<f64>,
    #[arg(long)]
    pub pixel_map: Option<PathBuf>,
    #[arg(long)]
    pub overlay: Option<PathBuf>,
}

pub fn cmd_vasculature(a: &VasculatureArgs) -> Result<()> {
    let mut img = load_image(&a.input, a.channel)?;
    if let Some(m) = &a.mask {
        let mask = load_mask(m)?;
        img = img.with_mask(mask)?;
    }
    let seeds: Option<Vec<SeedOverride>> = match &a.seed_file {
        Some(p) => Some(
            read_seeds(p)?
                .into_iter()
                .map(|s| SeedOverride {
                    c: s.c,
                    theta: s.theta,
                    u: s.u,
                    v: s.v,
                })
                .collect(),
        ),
        None => None,
    };
    let params = VascParams {
        disk: DiskParams {
            expected_radius: a.disk_radius,
            ..DiskParams::default()
        },
        ..VascParams::default()
    };
    let (model, map) = build_vasculature_with_map(&img, &params, seeds.as_deref())?;
    let doc = ModelDocument::from_model(&model);
    std::fs::write(&a.out, doc.to_json())?;
    if let Some(f) = &a.features_out {
        write_features(&model, f)?;
    }
    if let Some(p) = &a.pixel_map {
        save_gray8(&map.to_image(), p)?;
    }
    if let Some(o) = &a.overlay {
        let mut c = Canvas::from_image(&img);
        draw_model(&mut c, &doc);
        c.save(o)?;
    }
    eprintln!(
        "{} segments, {} junctions",
        model.segments.len(),
        model.junctions.len()
    );
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("features");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

pub fn write_features(
    model: &orientrace::vasculature::VasculatureModel,
    path: &Path,
) -> Result<()> {
    let feats = model_features(model);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["segment", "index", "x", "y", "distance_to_disk"])?;
    for p in &feats.points {
        w.write_record([
            p.segment.to_string(),
            p.index.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            p.distance_to_disk.to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(sibling(path, "_segments"))?;
    w.write_record([
        "segment",
        "parent",
        "length",
        "mean_width",
        "mean_curvature",
    ])?;
    for s in &feats.segments {
        w.write_record([
            s.segment.to_string(),
            s.parent.map(|p| p.to_string()).unwrap_or_default(),
            s.length.to_string(),
            s.mean_width.to_string(),
            s.mean_curvature.to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(sibling(path, "_junctions"))?;
    w.write_record(["x", "y", "theta", "kind", "segment_ids"])?;
    for j in &feats.junctions {
        let kind = serde_json::to_value(j.kind)?
            .as_str()
            .unwrap_or_default()
            .to_string();
        let ids: Vec<String> = j.segment_ids.iter().map(|i| i.to_string()).collect();
        w.write_record([
            j.position[0].to_string(),
            j.position[1].to_string(),
            j.theta.to_string(),
            kind,
            ids.join(" "),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct ValidateWidthsArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with columns `profile_id, ux, uy, vx, vy, width` and optionally
    /// `image_id`.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    pub match_radius: f64,
}

pub const TRUTH_COLUMNS: [&str; 6] = ["profile_id", "ux", "uy", "vx", "vy", "width"];

pub fn read_truth(path: &Path) -> Result<Vec<TruthProfile>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut idx = Vec::new();
    for c in TRUTH_COLUMNS {
        idx.push(col(c).ok_or_else(|| CliError::Usage(format!("truth CSV lacks column `{c}`")))?);
    }
    let image_col = col("image_id");
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec.get(idx[k])
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| {
                    CliError::Usage(format!("bad number in column `{}`", TRUTH_COLUMNS[k]))
                })
        };
        out.push(TruthProfile {
            image_id: image_col
                .and_then(|i| rec.get(i))
                .unwrap_or_default()
                .to_string(),
            profile_id: rec.get(idx[0]).unwrap_or_default().to_string(),
            u: [num(1)?, num(2)?],
            v: [num(3)?, num(4)?],
            width: num(5)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct WidthReport {
    pub schema: &'static str,
    #[serde(flatten)]
    pub stats: orientrace::widths::WidthStats,
    pub failed: Vec<String>,
}

pub fn cmd_validate_widths(a: &ValidateWidthsArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.model)
        .map_err(|e| CliError::Usage(format!("cannot read model: {e}")))?;
    let doc = ModelDocument::from_json(&text)?;
    let truth = read_truth(&a.truth)?;
    let records = match_profiles(&truth, &doc.measured_profiles(), a.match_radius);
    let failed = truth
        .iter()
        .zip(&records)
        .filter(|(_, r)| r.is_none())
        .map(|(t, _)| t.profile_id.clone())
        .collect();
    let report = WidthReport {
        schema: "orientrace.widths/1",
        stats: width_stats(&records),
        failed,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SceneArg {
    Straight,
    Crossing,
    Parallel,
    Reflex,
    Widening,
    YBranch,
    Tree,
    Disk,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long, value_enum)]
    pub scene: SceneArg,
    /// Vessel width (FWHM, pixels).
    #[arg(long)]
    pub width: Option<f64>,
    #[arg(long)]
    pub contrast: Option<f64>,
    /// Angle in degrees (vessel direction, or crossing angle).
    #[arg(long, allow_negative_numbers = true)]
    pub angle: Option<f64>,
    #[arg(long)]
    pub gap: Option<f64>,
    /// Relative height of the central light reflex.
    #[arg(long)]
    pub reflex: Option<f64>,
    #[arg(long)]
    pub end_width: Option<f64>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub bars: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth JSON; defaults to the image path with `.json`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

pub fn build_scene(a: &PhantomArgs) -> Scene {
    use std::f64::consts::PI;
    let deg = |d: f64| d.to_radians();
    let mut s = match a.scene {
        SceneArg::Straight => phantom::straight(
            a.width.unwrap_or(8.0),
            a.contrast.unwrap_or(0.3),
            a.angle.map(deg).unwrap_or(0.0),
        ),
        SceneArg::Crossing => {
            phantom::crossing(a.width.unwrap_or(8.0), a.angle.map(deg).unwrap_or(PI / 3.0))
        }
        SceneArg::Parallel => phantom::parallel(a.width.unwrap_or(6.0), a.gap.unwrap_or(3.0)),
        SceneArg::Reflex => phantom::reflex(a.width.unwrap_or(12.0), a.reflex.unwrap_or(0.6)),
        SceneArg::Widening => {
            phantom::widening(a.width.unwrap_or(6.0), a.end_width.unwrap_or(14.0))
        }
        SceneArg::YBranch => phantom::y_branch(
            a.width.unwrap_or(9.0),
            a.end_width.unwrap_or(6.0),
            a.angle.map(deg).unwrap_or(PI / 4.0),
        ),
        SceneArg::Tree => phantom::tree(),
        SceneArg::Disk => phantom::disk(a.radius.unwrap_or(60.0), a.bars.unwrap_or(6)),
    };
    s.noise = a.noise;
    s.seed = a.seed;
    s
}

pub fn cmd_phantom(a: &PhantomArgs) -> Result<()> {
    let s = build_scene(a);
    save_gray8(&s.render(), &a.out)?;
    let truth = a
        .truth
        .clone()
        .unwrap_or_else(|| a.out.with_extension("json"));
    std::fs::write(&truth, serde_json::to_string_pretty(&s.truth())? + "\n")?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct CompletionArgs {
    /// `x1 y1 theta1 x2 y2 theta2`; angles are slopes in the graph picture.
    #[arg(long, num_args = 6, allow_negative_numbers = true, required = true)]
    pub boundary: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.125)]
    pub d11: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 41)]
    pub nx: usize,
    #[arg(long, default_value_t = 41)]
    pub ny: usize,
    #[arg(long, default_value_t = 41)]
    pub nt: usize,
    /// Samples along the mode curve.
    #[arg(long, default_value_t = 101)]
    pub samples: usize,
    #[arg(long)]
    pub out_prefix: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct CompletionSummary {
    pub schema: &'static str,
    pub setup: CompletionSetup,
    pub grid: FieldGrid,
    /// Field layout: x-slices, each row-major in `(theta, y)`, f64 LE.
    pub layout: &'static str,
    pub max_deviation_y: f64,
    pub max_deviation_theta: f64,
    pub elastica_energy: f64,
    pub energy_closed_form: f64,
    pub energy_quoted_form: f64,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn cmd_completion_demo(a: &CompletionArgs) -> Result<()> {
    let b = &a.boundary;
    let setup = CompletionSetup {
        g1: HPoint::new(b[0], b[1], b[2]),
        g2: HPoint::new(b[3], b[4], b[5]),
        lambda_res: a.lambda,
        d11: a.d11,
        beta: a.beta,
    };
    setup.validate()?;
    if a.nx < 1 || a.ny < 2 || a.nt < 2 || a.samples < 3 {
        return Err(CliError::Usage("grid sizes are too small".into()));
    }
    let span = setup.g2.x - setup.g1.x;
    let xs = (0..a.nx)
        .map(|i| setup.g1.x + span * (i + 1) as f64 / (a.nx + 1) as f64)
        .collect();
    let (ylo, yhi) = (setup.g1.y.min(setup.g2.y), setup.g1.y.max(setup.g2.y));
    let tmax = setup.g1.theta.abs().max(setup.g2.theta.abs()) + 1.0;
    let grid = FieldGrid {
        xs,
        ys: FieldGrid::linspace(ylo - 0.5 * span, yhi + 0.5 * span, a.ny),
        thetas: FieldGrid::linspace(-tmax, tmax, a.nt),
    };
    let field = completion_field_h3(&setup, &grid)?;
    let mut bytes = Vec::with_capacity(field.values.len() * 8);
    for v in &field.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(with_suffix(&a.out_prefix, "_field.bin"), bytes)?;

    let mode = extract_mode(&setup, a.samples)?;
    let cubic = cubic_hermite(setup.g1, setup.g2)?;
    let mut dev_y = 0.0f64;
    let mut dev_t = 0.0f64;
    let mut mode_csv = csv::Writer::from_path(with_suffix(&a.out_prefix, "_mode.csv"))?;
    let mut cubic_csv = csv::Writer::from_path(with_suffix(&a.out_prefix, "_cubic.csv"))?;
    mode_csv.write_record(["x", "y", "theta"])?;
    cubic_csv.write_record(["x", "y", "theta"])?;
    for (p, t) in mode.pos.iter().zip(&mode.theta) {
        let (cy, ct) = (cubic.eval(p[0]), cubic.slope(p[0]));
        dev_y = dev_y.max((p[1] - cy).abs());
        dev_t = dev_t.max((t - ct).abs());
        mode_csv.write_record([p[0].to_string(), p[1].to_string(), t.to_string()])?;
        cubic_csv.write_record([p[0].to_string(), cy.to_string(), ct.to_string()])?;
    }
    mode_csv.flush()?;
    cubic_csv.flush()?;

    let local_g2 = setup.g1.inv().mul(setup.g2);
    let summary = CompletionSummary {
        schema: "orientrace.completion/1",
        setup,
        layout: "x-major, then theta, then y; little-endian f64",
        max_deviation_y: dev_y,
        max_deviation_theta: dev_t,
        elastica_energy: elastica_energy(&cubic.sample(setup.g2.x, 2001), a.beta)?,
        energy_closed_form: heisenberg_energy_min(local_g2.x, local_g2.y, local_g2.theta, a.beta),
        energy_quoted_form: heisenberg_energy_quoted(
            local_g2.x,
            local_g2.y,
            local_g2.theta,
            a.beta,
        ),
        grid,
    };
    std::fs::write(
        with_suffix(&a.out_prefix, "_field.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    println!("max deviation: {:e}", dev_y.max(dev_t));
    Ok(())
}
