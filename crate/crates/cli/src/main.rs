use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pocketdiff::checkpoint::Checkpoint;
use pocketdiff::config::FlatConfig;
use pocketdiff::dataio::{bond_table, generate_corpus, read_corpus, read_pocket, read_xyz, write_corpus, write_molecule, CorpusSpec, Role};
use pocketdiff::diffusion::Molecule;
use pocketdiff::evalkit::{full_report, Binning};
use pocketdiff::rng::{stream, Purpose};
use pocketdiff::sampler::{choose_atom_count, sample_molecule, SizeStats};
use pocketdiff::schedules::{dump_curves, AnnealSpec, NoiseSchedule};
use pocketdiff::trainer::{train, TrainConfig};
use pocketdiff::{Error, Result};

#[derive(Parser)]
#[command(name = "pocketdiff", version, about = "Pocket-conditioned ligand diffusion at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ligand/pocket corpus.
    GenData {
        /// Corpus spec file (key=value); defaults apply to missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Extra `key=value` overrides, applied after the corpus spec file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Write into a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train a denoiser on a corpus directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Sample ligands for one pocket from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pocket: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 2021)]
        seed: u64,
        /// Fixed atom count; otherwise drawn from the training size histogram.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bond-length and all-atom distance JSD report.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate annealing curves.
    Schedule {
        /// Curve specs such as `arc:r=2` or `original:mu=12`.
        #[arg(long, num_args = 1.., required = true)]
        anneal: Vec<String>,
        #[arg(long, default_value_t = 200)]
        epochs: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn parent_dir(path: &Path) -> Result<PathBuf> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    create_dir(&dir)?;
    Ok(dir)
}

fn load_config<C: FlatConfig>(file: Option<&Path>, overrides: &[String]) -> Result<C> {
    let mut cfg = match file {
        Some(p) => C::from_file(p)?,
        None => C::default(),
    };
    cfg.apply_overrides(overrides)?;
    Ok(cfg)
}

fn gen_data(spec: Option<&Path>, out: &Path, seed: Option<u64>, overrides: &[String], force: bool) -> Result<()> {
    let mut cfg: CorpusSpec = load_config(spec, overrides)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    if !force && out.is_dir() && fs::read_dir(out).map_err(io_err(out))?.next().is_some() {
        return Err(Error::OutputNotEmpty(out.to_path_buf()));
    }
    let corpus = generate_corpus(&cfg)?;
    write_corpus(out, &corpus)?;
    write_text(&out.join("corpus_spec.txt"), &cfg.render())?;
    let ligand: usize = corpus.iter().map(|g| g.complex.ligand.len()).sum();
    let pocket: usize = corpus.iter().map(|g| g.complex.protein.len()).sum();
    let mut names: Vec<&str> = corpus.iter().map(|g| g.template.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    println!(
        "complexes={} ligand_atoms={ligand} pocket_atoms={pocket} templates={} out={}",
        corpus.len(),
        names.len(),
        out.display()
    );
    Ok(())
}

fn train_cmd(config: Option<&Path>, data: &Path, out: &Path, seed: Option<u64>, overrides: &[String]) -> Result<()> {
    let mut cfg: TrainConfig = load_config(config, overrides)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let complexes: Vec<_> = read_corpus(data)?.into_iter().map(|e| e.complex).collect();
    let outcome = train(&cfg, &complexes, out)?;
    match outcome.records.last() {
        Some(r) => println!(
            "steps={} final_loss={:.6} checkpoint={}",
            outcome.records.len(),
            r.loss,
            outcome.checkpoint_path.display()
        ),
        None => println!("steps=0 checkpoint={}", outcome.checkpoint_path.display()),
    }
    Ok(())
}

fn meta<'a>(ck: &'a Checkpoint, path: &Path, key: &str) -> Result<&'a str> {
    ck.meta(key).ok_or_else(|| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: format!("missing metadata `{key}`"),
    })
}

fn meta_parse<T: std::str::FromStr>(ck: &Checkpoint, path: &Path, key: &str) -> Result<T> {
    let raw = meta(ck, path, key)?;
    raw.parse().map_err(|_| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: format!("metadata `{key}` has unreadable value `{raw}`"),
    })
}

fn sample_cmd(checkpoint: &Path, pocket_path: &Path, n: usize, seed: u64, m: Option<usize>, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let steps: usize = meta_parse(&ck, checkpoint, "schedule.num_steps")?;
    let schedule = NoiseSchedule::linear(
        steps,
        meta_parse(&ck, checkpoint, "schedule.beta_start")?,
        meta_parse(&ck, checkpoint, "schedule.beta_end")?,
    )?;
    let config = &ck.params.config;
    if config.num_steps != steps {
        return Err(Error::ParamMismatch(format!(
            "denoiser embeds {} steps but the schedule has {steps}",
            config.num_steps
        )));
    }
    let pocket = read_pocket(pocket_path)?;
    if pocket.num_types != config.protein_types {
        return Err(Error::ParamMismatch(format!(
            "pocket has {} atom types, checkpoint expects {}",
            pocket.num_types, config.protein_types
        )));
    }
    let stats = match m {
        Some(_) => SizeStats::default(),
        None => meta(&ck, checkpoint, "sizes")?.parse::<SizeStats>()?,
    };
    create_dir(out)?;
    let pocket_id = pocket_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    write_text(
        &out.join("sample_config.txt"),
        &format!(
            "checkpoint={}\npocket={}\nn={n}\nseed={seed}\nm={}\nschedule.num_steps={steps}\nschedule.beta_start={:?}\nschedule.beta_end={:?}\nsizes={}\n",
            checkpoint.display(),
            pocket_path.display(),
            m.map_or("auto".to_string(), |v| v.to_string()),
            schedule.beta(1),
            schedule.beta(steps),
            if m.is_some() { "fixed".to_string() } else { stats.to_string() },
        ),
    )?;
    let mut manifest = String::from("sample_id,seed,m,pocket,file\n");
    for i in 0..n {
        let mut rng = stream(seed, 0, i as u64, Purpose::Sampling);
        let count = choose_atom_count(&stats, m, &mut rng)?;
        let mol = sample_molecule(&pocket, count, config.ligand_types, &ck.params, &schedule, &mut rng)?;
        let id = format!("s{i:05}");
        let file = format!("{id}.xyz");
        write_molecule(&out.join(&file), &mol, &format!("sample:{pocket_id}:seed={seed}:i={i}"))?;
        manifest.push_str(&format!("{id},{seed},{count},{pocket_id},{file}\n"));
    }
    write_text(&out.join("manifest.csv"), &manifest)?;
    println!("samples={n} out={}", out.display());
    Ok(())
}

/// Every ligand-role XYZ file in `dir`, in file-name order.
fn ligands_in(dir: &Path) -> Result<Vec<Molecule>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "xyz"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let rec = read_xyz(&p)?;
        if rec.role == Role::Ligand {
            out.push(rec.into_molecule()?);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptySet(format!("no ligand XYZ files in {}", dir.display())));
    }
    Ok(out)
}

fn eval_cmd(generated: &Path, reference: &Path, out: &Path) -> Result<()> {
    let gen = ligands_in(generated)?;
    let refs = ligands_in(reference)?;
    let table = bond_table();
    let (bonds, dist) = (Binning::bond_lengths(), Binning::all_atom());
    let report = full_report(&gen, &refs, &table, bonds, dist)?;
    let dir = parent_dir(out)?;
    write_text(out, &report.to_csv())?;
    let mut echo = format!(
        "generated={}\nreference={}\ngenerated_count={}\nreference_count={}\nbond_bins={}:{}:{}\ndistance_bins={}:{}:{}\n",
        generated.display(),
        reference.display(),
        gen.len(),
        refs.len(),
        bonds.lo,
        bonds.hi,
        bonds.bins,
        dist.lo,
        dist.hi,
        dist.bins
    );
    for spec in &table {
        echo.push_str(&format!("bond.{}={}:{}\n", spec.label, spec.lo, spec.hi));
    }
    write_text(&dir.join("eval_config.txt"), &echo)?;
    print!("{}", report.to_csv());
    Ok(())
}

fn schedule_cmd(anneal: &[String], epochs: u64, out: &Path) -> Result<()> {
    let specs = anneal
        .iter()
        .map(|s| {
            let spec: AnnealSpec = s.parse()?;
            Ok((spec.to_string(), spec))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = dump_curves(&specs, epochs)?;
    let dir = parent_dir(out)?;
    write_text(out, &table.to_csv())?;
    let mut echo = format!("epochs={epochs}\n");
    for (i, (name, _)) in specs.iter().enumerate() {
        echo.push_str(&format!("anneal.{i}={name}\n"));
    }
    write_text(&dir.join("schedule_config.txt"), &echo)?;
    println!("curves={} epochs={epochs} out={}", specs.len(), out.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            spec,
            out,
            seed,
            overrides,
            force,
        } => gen_data(spec.as_deref(), &out, seed, &overrides, force),
        Command::Train {
            config,
            data,
            out,
            seed,
            overrides,
        } => train_cmd(config.as_deref(), &data, &out, seed, &overrides),
        Command::Sample {
            checkpoint,
            pocket,
            n,
            seed,
            m,
            out,
        } => sample_cmd(&checkpoint, &pocket, n, seed, m, &out),
        Command::Eval {
            generated,
            reference,
            out,
        } => eval_cmd(&generated, &reference, &out),
        Command::Schedule { anneal, epochs, out } => schedule_cmd(&anneal, epochs, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("ERROR:cli:usage: {first}");
            eprint!("{}", e.render());
            return ExitCode::from(2);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("ERROR:{}:{}: {msg}", e.module(), e.kind());
            ExitCode::FAILURE
        }
    }
}
