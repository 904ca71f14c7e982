use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use elastica_seg::convergence::{write_csv, ResidualRecord};
use elastica_seg::depth::{init_multiphase, rank_orderings_full, segment_with_depth, DepthResult, Ordering};
use elastica_seg::pnm::{load_image, save_field, save_image};
use elastica_seg::synth::{add_noise_chain, make_phantom, NoiseSpec, PhantomSpec, RNG_NAME};
use elastica_seg::two_phase::{default_init, segment_two_phase};
use elastica_seg::{Error, Result, ScalarField, SolverConfig};

/// Exit status for a run that finished `max_outer` iterations without
/// meeting the stopping rule; all outputs are still written.
const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Parser)]
#[command(name = "elastica-seg", version, about = "Elastica segmentation under noise-model uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Two-phase segmentation.
    Segment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Initial field (PGM); defaults to a centered disk of radius min(w, h) / 4.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Layered segmentation with depth.
    Depth {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        objects: usize,
        /// `auto`, or a permutation of 1..=N nearest first, e.g. `2,1`.
        #[arg(long, default_value = "auto")]
        ordering: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic phantom with ground-truth masks.
    Phantom {
        #[arg(long)]
        spec: PathBuf,
        /// Comma-separated `kind:parameter` steps applied in order.
        #[arg(long, default_value = "")]
        noise: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Pgm)]
        format: Format,
    },
    /// Parse a config and print the resolved parameters.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Pgm,
    Ppm,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_NOT_CONVERGED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Returns whether the solver converged (always true for non-solver commands).
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Segment { input, config, out, init } => segment(&input, &config, &out, init.as_deref()),
        Command::Depth {
            input,
            config,
            objects,
            ordering,
            out,
        } => depth(&input, &config, objects, &ordering, &out),
        Command::Phantom {
            spec,
            noise,
            seed,
            out,
            format,
        } => phantom(&spec, &noise, seed, &out, format),
        Command::Validate { config } => {
            let cfg = SolverConfig::from_file(&config)?;
            let mut m = Manifest::new("validate");
            m.path("config", &config);
            print!("{}", m.finish(Some(&cfg)));
            Ok(true)
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// `key = value` record of everything needed to repeat a run.
struct Manifest(String);

impl Manifest {
    fn new(command: &str) -> Self {
        let mut s = String::new();
        let _ = writeln!(s, "# elastica-seg {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "command = {command}");
        Manifest(s)
    }

    fn line(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.0, "{key} = {value}");
    }

    fn path(&mut self, key: &str, path: &Path) {
        self.line(key, path.display());
    }

    fn digest(&mut self, key: &str, path: &Path) -> Result<()> {
        self.path(key, path);
        let hash = sha256_hex(path)?;
        self.line(&format!("{key}_sha256"), hash);
        Ok(())
    }

    fn finish(mut self, cfg: Option<&SolverConfig>) -> String {
        if let Some(cfg) = cfg {
            self.0.push_str("# resolved solver configuration\n");
            self.0.push_str(&cfg.to_kv_string());
        }
        self.0
    }
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(io_err(out))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn write_diagnostics(path: &Path, records: &[ResidualRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(records, &mut buf).map_err(io_err(path))?;
    fs::write(path, buf).map_err(io_err(path))
}

fn segment(input: &Path, config: &Path, out: &Path, init: Option<&Path>) -> Result<bool> {
    let cfg = SolverConfig::from_file(config)?;
    let f = load_image(input)?;
    let (w, h) = f.dims();
    let phi0 = match init {
        Some(p) => load_image(p)?.channel_mean(),
        None => default_init(w, h),
    };
    let mut m = Manifest::new("segment");
    m.digest("input", input)?;
    m.path("config", config);
    match init {
        Some(p) => m.digest("init", p)?,
        None => m.line("init", "centered-disk"),
    }
    m.path("out", out);
    prepare_out(out)?;
    let res = segment_two_phase(&f, &cfg.scenarios, &cfg, &phi0)?;
    m.line("iterations", res.iterations);
    m.line("converged", res.converged);
    save_field(&res.phi_agg, out.join("phi.pgm"))?;
    save_field(&ScalarField::from_mask(&res.mask), out.join("mask.pgm"))?;
    write_diagnostics(&out.join("diagnostics.csv"), &res.diagnostics)?;
    write_text(&out.join("manifest.txt"), &m.finish(Some(&cfg)))?;
    Ok(res.converged)
}

fn write_depth_result(out: &Path, res: &DepthResult) -> Result<()> {
    for (i, (phi, mask)) in res.aggregates.iter().zip(&res.masks).enumerate() {
        save_field(phi, out.join(format!("phi_{}.pgm", i + 1)))?;
        save_field(&ScalarField::from_mask(mask), out.join(format!("mask_{}.pgm", i + 1)))?;
    }
    write_diagnostics(&out.join("diagnostics.csv"), &res.diagnostics)?;
    write_text(
        &out.join("energy.txt"),
        &format!("ordering = {}\nenergy = {:.12e}\n", res.ordering, res.energy),
    )
}

fn depth(input: &Path, config: &Path, objects: usize, ordering: &str, out: &Path) -> Result<bool> {
    let cfg = SolverConfig::from_file(config)?;
    let fixed = match ordering.trim() {
        "auto" => None,
        perm => {
            let o: Ordering = perm.parse()?;
            if o.len() != objects {
                return Err(Error::param(
                    "ordering",
                    format!("`{perm}` has {} labels for {objects} objects", o.len()),
                ));
            }
            Some(o)
        }
    };
    let f = load_image(input)?;
    let mut m = Manifest::new("depth");
    m.digest("input", input)?;
    m.path("config", config);
    m.line("objects", objects);
    m.line("ordering", ordering.trim());
    m.path("out", out);
    prepare_out(out)?;
    let phi0s = init_multiphase(&f, &cfg.scenarios, objects, &cfg)?;
    let best = match fixed {
        Some(o) => segment_with_depth(&f, &cfg.scenarios, &o, &cfg, &phi0s)?,
        None => {
            let ranked = rank_orderings_full(&f, &cfg.scenarios, objects, &cfg, &phi0s)?;
            let mut csv = String::from("ordering,energy\n");
            for r in &ranked {
                let _ = writeln!(csv, "{},{:.12e}", r.ordering, r.energy);
            }
            write_text(&out.join("orderings.csv"), &csv)?;
            ranked.into_iter().next().expect("at least two orderings")
        }
    };
    m.line("selected_ordering", &best.ordering);
    m.line("iterations", best.iterations);
    m.line("converged", best.converged);
    write_depth_result(out, &best)?;
    write_text(&out.join("manifest.txt"), &m.finish(Some(&cfg)))?;
    Ok(best.converged)
}

fn phantom(spec_path: &Path, noise: &str, seed: u64, out: &Path, format: Format) -> Result<bool> {
    let spec = PhantomSpec::from_file(spec_path)?;
    let noise: NoiseSpec = noise.parse()?;
    let (clean, masks) = make_phantom(&spec)?;
    let noisy = add_noise_chain(&clean, &noise, seed)?;
    let mut m = Manifest::new("phantom");
    m.digest("spec", spec_path)?;
    m.line("noise", &noise);
    m.line("seed", seed);
    m.line("rng", RNG_NAME);
    m.path("out", out);
    prepare_out(out)?;
    let (clean, noisy, ext) = match format {
        Format::Pgm => (clean, noisy, "pgm"),
        Format::Ppm => (gray_to_rgb(clean)?, gray_to_rgb(noisy)?, "ppm"),
    };
    save_image(&clean, out.join(format!("clean.{ext}")))?;
    save_image(&noisy, out.join(format!("noisy.{ext}")))?;
    for (i, mask) in masks.iter().enumerate() {
        save_field(&ScalarField::from_mask(mask), out.join(format!("truth_{}.pgm", i + 1)))?;
    }
    write_text(&out.join("manifest.txt"), &m.finish(None))?;
    Ok(true)
}

fn gray_to_rgb(img: elastica_seg::MultiChannelField) -> Result<elastica_seg::MultiChannelField> {
    let c = img.into_channels().remove(0);
    elastica_seg::MultiChannelField::new(vec![c.clone(), c.clone(), c])
}
