//! `echotrace` command-line front end.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use echotrace::acoustics::{simulate, Components, ContributionSet};
use echotrace::pointcloud::{write_point_cloud, PointCloudMeta};
use echotrace::preproc::{estimate_footprint, write_cache, CurvatureTable};
use echotrace::scene::{MaterialSpec, Scene, SceneConfig};
use echotrace::server::{Server, ServerConfig, SharedScene, DEFAULT_PORT};
use echotrace::synthesis::{
    pair_impulse_response, read_wav, render_signal, write_raw, write_wav, RawMeta, Signal, SpectralGrid,
};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "echotrace", version, about = "Ultrasonic geometric-acoustics simulator")]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "ECHOTRACE_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute curvature caches for every instance of a scene.
    Preprocess {
        scene: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the acoustic pipeline and export the contribution point cloud.
    Simulate {
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Build impulse responses per emitter/receiver pair and, given a
    /// signal, the received waveforms.
    Synthesize {
        scene: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Emitted waveform (WAV). Its rate must equal `--fs`.
        #[arg(long)]
        signal: Option<PathBuf>,
        /// Sample rate in Hz; defaults to four times the highest bin.
        #[arg(long)]
        fs: Option<f64>,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Serve the scene over TCP.
    Serve {
        scene: PathBuf,
        #[arg(long, env = "ECHOTRACE_PORT", default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Print triangle counts, estimated preprocessing footprint and
    /// materials without building the scene.
    Info {
        scene: PathBuf,
        /// Emit JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args, Debug)]
struct RunFlags {
    #[arg(long)]
    specular: bool,
    #[arg(long)]
    diffraction: bool,
    #[arg(long)]
    passive: bool,
    /// Shorthand for all three components.
    #[arg(long)]
    all: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RunFlags {
    fn components(&self) -> Components {
        if self.all {
            return Components::ALL;
        }
        let mut c = Components::NONE;
        if self.specular {
            c = c | Components::SPECULAR;
        }
        if self.diffraction {
            c = c | Components::DIFFRACTION;
        }
        if self.passive {
            c = c | Components::PASSIVE;
        }
        c
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let name = command_name(&cli.command);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = json!({ "error": name, "message": format!("{e:#}") });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Preprocess { .. } => "preprocess",
        Command::Simulate { .. } => "simulate",
        Command::Synthesize { .. } => "synthesize",
        Command::Serve { .. } => "serve",
        Command::Info { .. } => "info",
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool")?;
    }
    match cli.command {
        Command::Preprocess { scene, out } => preprocess(&scene, &out),
        Command::Simulate { scene, out, run } => {
            let scene = load(&scene)?;
            let set = run_pipeline(&scene, &run)?;
            export_point_cloud(&set, &out)
        }
        Command::Synthesize {
            scene,
            out,
            signal,
            fs,
            run,
        } => synthesize(&scene, &out, signal.as_deref(), fs, &run),
        Command::Serve { scene, port, host } => serve(&scene, &host, port),
        Command::Info { scene, json } => info(&scene, json),
    }
}

fn load(path: &Path) -> Result<Scene> {
    Scene::load(path).with_context(|| format!("loading {}", path.display()))
}

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn preprocess(path: &Path, out: &Path) -> Result<()> {
    let scene = load(path)?;
    create_dir(out)?;
    let table = CurvatureTable::compute(&scene);
    for (i, inst) in scene.instances().iter().enumerate() {
        let records = table.cache_records(&scene, i);
        let file = out.join(format!("{}.curv", inst.name));
        let w = BufWriter::new(fs::File::create(&file).with_context(|| format!("creating {}", file.display()))?);
        write_cache(w, scene.bins(), &records)?;
        let bytes = estimate_footprint(records.len() as u64, scene.bins() as u64)?;
        write_json(
            &file.with_extension("json"),
            &json!({
                "format": "echotrace-curvature",
                "instance": inst.name,
                "material": scene.materials()[inst.material].id,
                "triangles": records.len(),
                "frequencies": scene.frequencies(),
                "bytes": bytes,
                "revision": scene.revision(),
            }),
        )?;
        log::info!("{}: {} triangles", inst.name, records.len());
    }
    Ok(())
}

fn run_pipeline(scene: &Scene, flags: &RunFlags) -> Result<ContributionSet> {
    let table = CurvatureTable::compute(scene);
    Ok(simulate(scene, &table, flags.components(), flags.seed)?)
}

fn export_point_cloud(set: &ContributionSet, out: &Path) -> Result<()> {
    create_dir(out)?;
    let file = out.join("contributions.stpc");
    let w = BufWriter::new(fs::File::create(&file).with_context(|| format!("creating {}", file.display()))?);
    write_point_cloud(set, w).with_context(|| format!("writing {}", file.display()))?;
    write_json(&out.join("contributions.json"), &PointCloudMeta::describe(set))
}

fn synthesize(path: &Path, out: &Path, signal: Option<&Path>, fs: Option<f64>, flags: &RunFlags) -> Result<()> {
    let scene = load(path)?;
    let set = run_pipeline(&scene, flags)?;
    let fs = fs.unwrap_or_else(|| SpectralGrid::default_rate(scene.frequencies()));
    let emitted: Option<Signal> = match signal {
        Some(p) => {
            let s = read_wav(p).with_context(|| format!("reading {}", p.display()))?;
            if s.fs != fs {
                bail!("signal is sampled at {} Hz but --fs is {fs} Hz", s.fs);
            }
            Some(s)
        }
        None => None,
    };
    let signal_len = emitted.as_ref().map_or(0, |s| s.samples.len());
    let grid = SpectralGrid::for_scene(&scene, &set, fs, signal_len)?;
    create_dir(out)?;
    for s in 0..set.sources {
        for m in 0..set.receivers {
            let h = pair_impulse_response(&set, s, m, grid)?;
            let meta = |samples: usize| RawMeta {
                dtype: "f64le".into(),
                fs,
                samples,
                source: Some(s),
                receiver: m,
                seed: flags.seed,
            };
            let stem = format!("s{s}_m{m}");
            write_raw(&out.join(format!("ir_{stem}.f64")), &h.samples, &meta(h.samples.len()))?;
            if let Some(e) = &emitted {
                let y = render_signal(&h, e)?;
                let wav = out.join(format!("rx_{stem}.wav"));
                write_wav(&wav, &y.samples, fs)?;
                let mut side = serde_json::to_value(meta(y.samples.len()))?;
                side["dtype"] = json!("wav-f32");
                side["signal"] = json!(signal.map(|p| p.display().to_string()));
                write_json(&wav.with_extension("json"), &side)?;
            }
        }
    }
    Ok(())
}

fn serve(path: &Path, host: &str, port: u16) -> Result<()> {
    let scene = load(path)?;
    let table = CurvatureTable::compute(&scene);
    let address = format!("{host}:{port}")
        .parse()
        .with_context(|| format!("bad listen address {host}:{port}"))?;
    let config = ServerConfig {
        address,
        ..ServerConfig::default()
    };
    let server = Server::bind(SharedScene::new(scene, table), config).context("binding listener")?;
    println!("listening on {}", server.local_addr()?);
    server.run();
    Ok(())
}

fn info(path: &Path, as_json: bool) -> Result<()> {
    let config = SceneConfig::read(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let counts = config.triangle_counts(base)?;
    let bins = config.frequencies.resolve()?.len();
    let total: u64 = counts.iter().map(|c| c.1).sum();
    let bytes = estimate_footprint(total, bins as u64)?;
    let mib = bytes >> 20;
    let materials = config
        .materials
        .iter()
        .map(|m| MaterialSpec::from_config(m, bins))
        .collect::<Result<Vec<_>, _>>()?;

    if as_json {
        let v = json!({
            "instances": counts.iter().map(|(n, t)| json!({"name": n, "triangles": t})).collect::<Vec<_>>(),
            "triangles": total,
            "bins": bins,
            "footprint_bytes": bytes,
            "footprint_mib": mib,
            "materials": materials,
        });
        println!("{}", serde_json::to_string_pretty(&v)?);
        return Ok(());
    }
    println!("instances:");
    for (name, t) in &counts {
        println!("  {name:<24} {t:>12} triangles");
    }
    println!("triangles: {total}");
    println!("bins: {bins}");
    println!("footprint: {mib} MiB ({bytes} bytes)");
    println!("materials:");
    println!(
        "  {:<16} {:>8} {:>8} {:>10} {:>19} {:>19}",
        "id", "eta", "c_sat", "area_ref", "beta smooth..edge", "k smooth..edge"
    );
    for m in &materials {
        let area = m.area_ref.map_or("median".to_string(), |a| format!("{a:.3e}"));
        for b in 0..bins {
            let id = if b == 0 { m.id.as_str() } else { "" };
            let (eta, csat, area) = if b == 0 {
                (format!("{:.3}", m.eta), format!("{:.3}", m.c_sat), area.clone())
            } else {
                Default::default()
            };
            println!(
                "  {id:<16} {eta:>8} {csat:>8} {area:>10} {:>8.4}..{:<9.4} {:>8.4}..{:<9.4}",
                m.beta_smooth[b], m.beta_edge[b], m.k_smooth[b], m.k_edge[b]
            );
        }
    }
    Ok(())
}
