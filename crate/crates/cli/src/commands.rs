use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use seacolor::backscatter::{direct_signal, initial_backscatter, run_backscatter, OmegaBin};
use seacolor::attenuation::{initial_attenuation, run_attenuation};
use seacolor::eval::{patch_mean_error, PatchSet};
use seacolor::io::{load_image, load_range, save_image, ImageFileSpec};
use seacolor::optim::AdamState;
use seacolor::pipeline::{correct_image, Correction, StreamCorrector};
use seacolor::reduce::Executor;
use seacolor::synth::{degrade, generate_scene, write_bundle, SceneSpec, TextureSpec};
use seacolor::{validate_pair, FitState, Image, RangeMap, Scene};

use crate::config::CliConfig;
use crate::{BenchArgs, CorrectArgs, EvalArgs, Failure, StreamArgs, SynthArgs};

/// Standard benchmark sizes, about 0.7 and 2.4 megapixels.
pub const BENCH_SIZES: [(usize, usize); 2] = [(1024, 683), (1896, 1266)];

type Outcome = Result<(), Failure>;

fn input(e: impl std::fmt::Display) -> Failure {
    Failure::Input(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> Failure {
    Failure::Internal(e.to_string())
}

fn load_config(path: Option<&Path>, threads: Option<usize>) -> Result<CliConfig, Failure> {
    let mut cfg = match path {
        Some(p) => CliConfig::load(p).map_err(Failure::Input)?,
        None => CliConfig::default(),
    };
    if let Some(t) = threads {
        cfg.pipeline.threads = t;
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| internal(format!("{}: {e}", path.display())))
}

pub fn correct(args: &CorrectArgs, threads: Option<usize>) -> Outcome {
    let mut cfg = load_config(args.config.as_deref(), threads)?;
    if let Some(n) = args.iters_bs {
        cfg.pipeline.backscatter_iters = n;
    }
    if let Some(n) = args.iters_at {
        cfg.pipeline.attenuation_iters = n;
    }
    let image: Image = load_image(&args.image, &cfg.input).map_err(input)?;
    let range: RangeMap = load_range(&args.range).map_err(input)?;
    let result = correct_image(&image, &range, &cfg.pipeline).map_err(input)?;
    save_image(&result.image, &args.out, &cfg.output).map_err(internal)?;
    if let Some(path) = &args.state_out {
        write_text(path, &result.state.to_text())?;
    }
    if let Some(path) = &args.diagnostics {
        write_text(path, &diagnostics_report(&result, &cfg))?;
    }
    println!("backscatter_loss {}", result.diagnostics.backscatter_loss);
    println!("attenuation_loss {}", result.diagnostics.attenuation_loss);
    println!("omega_max_abs_mean {}", result.diagnostics.omega.max_abs_mean());
    Ok(())
}

fn diagnostics_report(result: &Correction<f64>, cfg: &CliConfig) -> String {
    let d = &result.diagnostics;
    let mut out = String::new();
    let _ = writeln!(out, "backscatter_iters {}", cfg.pipeline.backscatter_iters);
    let _ = writeln!(out, "attenuation_iters {}", cfg.pipeline.attenuation_iters);
    let _ = writeln!(out, "backscatter_loss {}", d.backscatter_loss);
    let _ = writeln!(out, "attenuation_loss {}", d.attenuation_loss);
    let _ = writeln!(out, "omega_max_abs_mean {}", d.omega.max_abs_mean());
    for (i, bin) in d.omega.bins.iter().enumerate() {
        match bin {
            OmegaBin::Empty { z_lo, z_hi } => {
                let _ = writeln!(out, "omega.{i}.z_range {z_lo} {z_hi}");
                let _ = writeln!(out, "omega.{i}.empty");
            }
            OmegaBin::Occupied {
                z_lo,
                z_hi,
                pixels,
                selected,
                mean_direct,
            } => {
                let _ = writeln!(out, "omega.{i}.z_range {z_lo} {z_hi}");
                let _ = writeln!(out, "omega.{i}.pixels {pixels}");
                let _ = writeln!(out, "omega.{i}.selected {selected}");
                let [r, g, b] = mean_direct;
                let _ = writeln!(out, "omega.{i}.mean_direct {r} {g} {b}");
            }
        }
    }
    for (i, v) in d.backscatter_trace.iter().enumerate() {
        let _ = writeln!(out, "backscatter_trace.{i} {v}");
    }
    for (i, v) in d.attenuation_trace.iter().enumerate() {
        let _ = writeln!(out, "attenuation_trace.{i} {v}");
    }
    out
}

/// Files of `dir` keyed by stem. Range sidecars (`.scale`) are skipped.
fn files_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| input(format!("{}: {e}", dir.display())))?.path();
        if path.is_file() && path.extension().is_none_or(|e| e != "scale") {
            paths.push(path);
        }
    }
    paths.sort();
    let mut map: BTreeMap<String, PathBuf> = BTreeMap::new();
    for path in paths {
        let Some(stem) = path.file_stem().map(|s| s.to_string_lossy().into_owned()) else {
            continue;
        };
        if let Some(first) = map.get(&stem) {
            eprintln!(
                "warning: {} shares stem `{stem}` with {}; ignored",
                path.display(),
                first.display()
            );
            continue;
        }
        map.insert(stem, path);
    }
    Ok(map)
}

fn copy_uncorrected(src: &Path, dst: &Path) -> Outcome {
    fs::copy(src, dst)
        .map(|_| ())
        .map_err(|e| internal(format!("copying {} to {}: {e}", src.display(), dst.display())))
}

pub fn stream(args: &StreamArgs, threads: Option<usize>) -> Outcome {
    let mut cfg = load_config(args.config.as_deref(), threads)?;
    if let Some(n) = args.iters_per_frame {
        cfg.pipeline.stream_iters = n;
    }
    let initial = match &args.state_in {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
            Some(FitState::from_text(&text).map_err(|e| input(format!("{}: {e}", path.display())))?)
        }
        None => None,
    };
    let images = files_by_stem(&args.images)?;
    let ranges = files_by_stem(&args.ranges)?;
    if images.is_empty() {
        return Err(input(format!("no frames in {}", args.images.display())));
    }
    for stem in ranges.keys().filter(|s| !images.contains_key(*s)) {
        eprintln!("warning: range map `{stem}` has no frame; skipped");
    }
    fs::create_dir_all(&args.out).map_err(|e| internal(format!("{}: {e}", args.out.display())))?;
    let mut corrector = StreamCorrector::new(cfg.pipeline, initial).map_err(input)?;
    let mut corrected = 0usize;
    for (stem, image_path) in &images {
        let Some(range_path) = ranges.get(stem) else {
            eprintln!("warning: frame `{stem}` has no range map; skipped");
            continue;
        };
        let out_path = args.out.join(format!("{stem}.png"));
        let loaded = load_image::<f64>(image_path, &cfg.input)
            .and_then(|img| load_range::<f64>(range_path).map(|z| (img, z)));
        let (image, range) = match loaded {
            Ok(pair) => pair,
            Err(e) => {
                eprintln!("warning: frame `{stem}`: {e}; copied uncorrected");
                println!("frame {stem} uncorrected");
                copy_uncorrected(image_path, &out_path)?;
                continue;
            }
        };
        let outcome = corrector.push(&image, &range);
        if let Some(e) = outcome.error {
            eprintln!("warning: frame `{stem}`: {e}; copied uncorrected");
            println!("frame {stem} uncorrected");
            copy_uncorrected(image_path, &out_path)?;
            continue;
        }
        save_image(&outcome.image, &out_path, &cfg.output).map_err(internal)?;
        corrected += 1;
        println!(
            "frame {stem} backscatter_loss {} attenuation_loss {}",
            outcome.backscatter_loss.unwrap_or(f64::NAN),
            outcome.attenuation_loss.unwrap_or(f64::NAN)
        );
    }
    println!("frames {} corrected {corrected}", images.len());
    if let (Some(path), Some(state)) = (&args.state_out, corrector.state()) {
        write_text(path, &state.to_text())?;
    }
    if corrected == 0 {
        return Err(input("no frame could be corrected"));
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Outcome {
    let spec = SceneSpec {
        width: args.width,
        height: args.height,
        profile: args.profile,
        texture: TextureSpec {
            chart: args.chart,
            ..TextureSpec::default()
        },
        seed: args.seed,
        ..SceneSpec::default()
    };
    spec.validate().map_err(input)?;
    let scene: Scene = generate_scene(&spec).map_err(input)?;
    let degraded = degrade(&scene);
    write_bundle(&scene, &degraded, &args.out).map_err(internal)?;
    if let Some(chart) = &scene.chart {
        write_text(&args.out.join("patches.csv"), &chart.to_csv())?;
    } else if args.chart {
        eprintln!("warning: {}x{} is too small for a chart", args.width, args.height);
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Outcome {
    let spec = ImageFileSpec {
        transfer: args.transfer,
        ..ImageFileSpec::default()
    };
    let image: Image = load_image(&args.image, &spec).map_err(input)?;
    let text = fs::read_to_string(&args.patches).map_err(|e| input(format!("{}: {e}", args.patches.display())))?;
    let patches = PatchSet::parse_csv(&text).map_err(|e| input(format!("{}: {e}", args.patches.display())))?;
    let report = patch_mean_error(&image, &patches).map_err(input)?;
    for (i, psi) in report.per_patch.iter().enumerate() {
        println!("patch {i} {psi:.2}");
    }
    println!("mean {:.2}", report.mean);
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub width: usize,
    pub height: usize,
    pub backscatter_ms: f64,
    pub attenuation_ms: f64,
    pub total_ms: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn bench_size(width: usize, height: usize, iters: usize, repeats: usize, seed: u64, threads: usize) -> Result<BenchRow, Failure> {
    let spec = SceneSpec {
        width,
        height,
        seed,
        ..SceneSpec::default()
    };
    spec.validate().map_err(input)?;
    let scene: Scene = generate_scene(&spec).map_err(internal)?;
    let image = degrade(&scene);
    let pair = validate_pair(&image, &scene.range).map_err(internal)?;
    let exec = Executor::with_threads(threads).map_err(input)?;
    let cfg = seacolor::PipelineConfig::default();
    let (mut bs_ms, mut at_ms, mut total_ms) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..repeats {
        let mut bs = initial_backscatter(&pair);
        let mut bs_opt = AdamState::default();
        let t = Instant::now();
        run_backscatter(&pair, &mut bs, &mut bs_opt, iters, &cfg.backscatter, &cfg.adam, &exec).map_err(internal)?;
        let bs_time = t.elapsed().as_secs_f64() * 1e3 / iters as f64;
        let direct = direct_signal(&pair, &bs, &cfg.backscatter);
        let mut at = initial_attenuation();
        let mut at_opt = AdamState::default();
        let t = Instant::now();
        run_attenuation(&pair, &direct, &mut at, &mut at_opt, iters, &cfg.attenuation, &cfg.adam, &exec)
            .map_err(internal)?;
        let at_time = t.elapsed().as_secs_f64() * 1e3 / iters as f64;
        bs_ms.push(bs_time);
        at_ms.push(at_time);
        total_ms.push(bs_time + at_time);
    }
    Ok(BenchRow {
        width,
        height,
        backscatter_ms: median(bs_ms),
        attenuation_ms: median(at_ms),
        total_ms: median(total_ms),
    })
}

pub fn bench(args: &BenchArgs, threads: Option<usize>) -> Outcome {
    if args.iters == 0 {
        return Err(input("--iters must be at least 1"));
    }
    if args.repeats == 0 {
        return Err(input("--repeats must be at least 1"));
    }
    let sizes = match (args.width, args.height) {
        (Some(w), Some(h)) => vec![(w, h)],
        _ => BENCH_SIZES.to_vec(),
    };
    let threads = threads.unwrap_or(1);
    println!("iters {} repeats {} threads {threads} (median of repeats)", args.iters, args.repeats);
    println!(
        "{:>12} {:>10} {:>16} {:>16} {:>16} {:>10}",
        "size", "pixels", "backscatter_ms", "attenuation_ms", "total_ms", "max_hz"
    );
    let mut rows = Vec::new();
    for (w, h) in sizes {
        let row = bench_size(w, h, args.iters, args.repeats, args.seed, threads)?;
        println!(
            "{:>12} {:>9.1}M {:>16.3} {:>16.3} {:>16.3} {:>10.1}",
            format!("{w}x{h}"),
            (w * h) as f64 / 1e6,
            row.backscatter_ms,
            row.attenuation_ms,
            row.total_ms,
            1e3 / row.total_ms
        );
        rows.push(row);
    }
    if let [small, large] = rows.as_slice() {
        let pixel_ratio = (large.width * large.height) as f64 / (small.width * small.height) as f64;
        println!("pixel_ratio {pixel_ratio:.3}");
        println!("cost_ratio {:.3}", large.total_ms / small.total_ms);
    }
    Ok(())
}
