//! Command-line front end: solve instances from files, generate benchmark
//! families, compare against the dense oracle and tabulate KKT residuals and
//! timings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use etrs_core::instances::{generate, GenClass, GenSpec};
use etrs_core::io::{load_instance, write_matrix_market, write_vector, InstanceMeta, ReportDocument};
use etrs_core::oracle::{oracle_solve, ORACLE_CAP};
use etrs_core::{batch, solve, CsrMatrix, Error, ProblemInstance, SolveConfig, SolveReport, Status};

/// Exit code for a certified duality gap.
pub const EXIT_GAP: i32 = 2;
pub const EXIT_ERROR: i32 = 1;

pub const MATRIX_FILE: &str = "A.mtx";
pub const A_FILE: &str = "a.txt";
pub const B_FILE: &str = "b.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "etrs", version, about = "Trust-region subproblem with one linear inequality")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one instance read from files and print the report.
    Solve(SolveArgs),
    /// Write a generated instance and its manifest.
    Generate(GenerateArgs),
    /// Compare the solver with the dense oracle on generated instances.
    Verify(VerifyArgs),
    /// Tabulate KKT residuals, time and matvecs over generated instances.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub c: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub delta: f64,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Seed of the Lanczos starting block; same as `--eig-seed`.
    #[arg(long, conflicts_with = "eig_seed")]
    pub seed: Option<u64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the primal solution as a vector file.
    #[arg(long)]
    pub emit_x: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// Relative change in the dual value that ends the alternation.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Seed of the Lanczos starting block.
    #[arg(long)]
    pub eig_seed: Option<u64>,
    #[arg(long)]
    pub dense_threshold: Option<usize>,
}

impl ConfigArgs {
    pub fn to_config(&self) -> SolveConfig {
        let mut cfg = SolveConfig::default();
        if let Some(v) = self.max_outer {
            cfg.max_outer = v;
        }
        if let Some(v) = self.tol {
            cfg.tol_outer = v;
        }
        if let Some(v) = self.eig_seed {
            cfg.eig.seed = v;
        }
        if let Some(v) = self.dense_threshold {
            cfg.eig.dense_threshold = v;
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Random,
}

impl From<ClassArg> for GenClass {
    fn from(c: ClassArg) -> Self {
        match c {
            ClassArg::One => GenClass::Class1,
            ClassArg::Two => GenClass::Class2,
            ClassArg::Random => GenClass::Random,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FamilyArgs {
    #[arg(long, value_enum, default_value = "1")]
    pub class: ClassArg,
    #[arg(long, default_value_t = 0.01)]
    pub density: f64,
    /// Multiplicity of the planted smallest eigenvalue (class 1).
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Keep the planted block structure unpermuted (class 1).
    #[arg(long)]
    pub no_permute: bool,
}

impl FamilyArgs {
    pub fn spec(&self, n: usize, seed: u64) -> GenSpec {
        GenSpec {
            class_id: self.class.into(),
            n,
            density: self.density,
            m: self.m,
            alpha: self.alpha,
            seed,
            permute: !self.no_permute,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    /// Smallest instance size.
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    /// Largest instance size; sizes are spread over `n..=n_max`.
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Seed of the first instance; the others follow consecutively.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Add the planted duality-gap fixture to the run.
    #[arg(long)]
    pub include_fixture: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    /// Instance sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

/// Worker cap from `ETRS_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("ETRS_THREADS")
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&t: &usize| t > 0)
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let go = move || {
        let result = match cli.command {
            Command::Solve(args) => cmd_solve(&args),
            Command::Generate(args) => cmd_generate(&args).map(|_| 0),
            Command::Verify(args) => cmd_verify(&args),
            Command::Bench(args) => cmd_bench(&args).map(|_| 0),
        };
        result.unwrap_or_else(|e| {
            eprintln!("error: {e}");
            EXIT_ERROR
        })
    };
    match thread_cap() {
        Some(t) => batch::with_threads(t, go),
        None => go(),
    }
}

/// Exit code as a function of the status alone.
pub fn exit_code(status: Status) -> i32 {
    match status {
        Status::Solved => 0,
        Status::DualityGap => EXIT_GAP,
    }
}

pub fn cmd_solve(args: &SolveArgs) -> Result<i32, Error> {
    let inst = load_instance(&args.matrix, &args.a, &args.b, args.c, args.delta)?;
    let mut cfg = args.config.to_config();
    if let Some(seed) = args.seed {
        cfg.eig.seed = seed;
    }
    let report = solve(&inst, &cfg)?;
    let meta = InstanceMeta {
        n: inst.n(),
        nnz: inst.matrix.nnz(),
        class: None,
        seed: None,
    };
    let json = ReportDocument::from_report(&report, meta).to_json()?;
    match &args.out {
        Some(path) => fs::write(path, json + "\n")?,
        None => println!("{json}"),
    }
    if let (Some(path), Some(x)) = (&args.emit_x, &report.x_star) {
        write_vector(path, x)?;
    }
    if report.status == Status::DualityGap {
        eprintln!("duality gap: objective is the dual lower bound");
    }
    Ok(exit_code(report.status))
}

/// Reproducibility record written next to generated files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: GenSpec,
    pub c: f64,
    pub delta: f64,
    pub n: usize,
    pub nnz: usize,
    /// File name to SHA-256 hex digest.
    pub files: BTreeMap<String, String>,
}

fn sha256_hex(path: &Path) -> Result<String, Error> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<Manifest, Error> {
    let spec = args.family.spec(args.n, args.seed);
    let inst = generate(&spec)?;
    fs::create_dir_all(&args.out_dir)?;
    let dir = &args.out_dir;
    write_matrix_market(&dir.join(MATRIX_FILE), &inst.matrix)?;
    write_vector(&dir.join(A_FILE), &inst.a)?;
    write_vector(&dir.join(B_FILE), &inst.b)?;
    let mut files = BTreeMap::new();
    for name in [MATRIX_FILE, A_FILE, B_FILE] {
        files.insert(name.to_string(), sha256_hex(&dir.join(name))?);
    }
    let manifest = Manifest {
        spec,
        c: inst.c,
        delta: inst.delta,
        n: inst.n(),
        nnz: inst.matrix.nnz(),
        files,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    println!("wrote {} (n = {}, nnz = {})", dir.display(), manifest.n, manifest.nnz);
    Ok(manifest)
}

/// The planted instance with a positive duality gap.
pub fn gap_fixture() -> ProblemInstance {
    ProblemInstance::new(
        CsrMatrix::from_diagonal(&[-1.0, 0.0]),
        vec![1.0, 0.0],
        vec![2.0, 0.0],
        0.0,
        1.0,
    )
    .expect("valid fixture")
}

/// One line of the verification table.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyRow {
    pub label: String,
    pub n: usize,
    pub status: Option<Status>,
    pub solver: f64,
    pub oracle: f64,
    pub kkt: f64,
    pub agree: bool,
    pub note: String,
}

fn verify_one(label: String, inst: &ProblemInstance, cfg: &SolveConfig) -> VerifyRow {
    let mut row = VerifyRow {
        label,
        n: inst.n(),
        status: None,
        solver: f64::NAN,
        oracle: f64::NAN,
        kkt: f64::NAN,
        agree: false,
        note: String::new(),
    };
    let oracle = match oracle_solve(inst) {
        Ok(o) => o.p_star,
        Err(e) => {
            row.note = format!("oracle: {e}");
            return row;
        }
    };
    row.oracle = oracle;
    let report = match solve(inst, cfg) {
        Ok(r) => r,
        Err(e) => {
            row.note = format!("solver: {e}");
            return row;
        }
    };
    row.status = Some(report.status);
    row.solver = report.objective;
    row.kkt = report.kkt.map_or(f64::NAN, |k| k.worst_relative(inst));
    let tol = 1e-6 * oracle.abs().max(1.0);
    row.agree = match report.status {
        Status::Solved => (report.objective - oracle).abs() <= tol,
        // The dual value is a strict lower bound when the gap is real.
        Status::DualityGap => oracle > report.dual_value + tol,
    };
    row
}

fn sizes(first: usize, last: usize, count: usize) -> Vec<usize> {
    let span = last.saturating_sub(first) + 1;
    (0..count).map(|i| first + (i * 7919) % span).collect()
}

pub fn verify_rows(args: &VerifyArgs) -> Result<Vec<VerifyRow>, Error> {
    let n_max = args.n_max.unwrap_or(args.n).max(args.n);
    if n_max > ORACLE_CAP {
        return Err(Error::OracleCap { n: n_max, cap: ORACLE_CAP });
    }
    let cfg = args.config.to_config();
    let mut jobs = Vec::with_capacity(args.count + 1);
    for (i, n) in sizes(args.n, n_max, args.count).into_iter().enumerate() {
        let seed = args.seed + i as u64;
        jobs.push((format!("seed {seed}"), generate(&args.family.spec(n, seed))?));
    }
    if args.include_fixture {
        jobs.push(("gap fixture".to_string(), gap_fixture()));
    }
    Ok(batch::map(&jobs, |(label, inst)| verify_one(label.clone(), inst, &cfg)))
}

fn status_name(s: Option<Status>) -> &'static str {
    match s {
        Some(Status::Solved) => "solved",
        Some(Status::DualityGap) => "gap",
        None => "error",
    }
}

pub fn format_verify(rows: &[VerifyRow]) -> String {
    let mut out = format!(
        "{:<12} {:>5} {:>7} {:>24} {:>24} {:>10} {:>10} {:>6}\n",
        "instance", "n", "status", "p_solver", "p_oracle", "|diff|", "kkt", "agree"
    );
    for r in rows {
        let _ = write!(
            out,
            "{:<12} {:>5} {:>7} {:>24.16e} {:>24.16e} {:>10.2e} {:>10.2e} {:>6}",
            r.label,
            r.n,
            status_name(r.status),
            r.solver,
            r.oracle,
            (r.solver - r.oracle).abs(),
            r.kkt,
            if r.agree { "yes" } else { "NO" }
        );
        if !r.note.is_empty() {
            let _ = write!(out, "  {}", r.note);
        }
        out.push('\n');
    }
    let agree = rows.iter().filter(|r| r.agree).count();
    let _ = writeln!(out, "{agree}/{} agree", rows.len());
    out
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<i32, Error> {
    let rows = verify_rows(args)?;
    print!("{}", format_verify(&rows));
    Ok(if rows.iter().all(|r| r.agree) { 0 } else { EXIT_ERROR })
}

/// Means over the repeats at one size.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub runs: usize,
    pub failures: usize,
    pub kkt1: f64,
    pub kkt2: f64,
    pub kkt3: f64,
    pub seconds: f64,
    pub matvecs: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn bench_rows(args: &BenchArgs) -> Result<Vec<BenchRow>, Error> {
    let cfg = args.config.to_config();
    let mut rows = Vec::with_capacity(args.n.len());
    for &n in &args.n {
        let mut ok: Vec<(SolveReport, f64)> = Vec::new();
        let mut failures = 0;
        for r in 0..args.repeats {
            let inst = generate(&args.family.spec(n, args.seed + r as u64))?;
            let start = Instant::now();
            match solve(&inst, &cfg) {
                Ok(report) => ok.push((report, start.elapsed().as_secs_f64())),
                Err(e) => {
                    eprintln!("n = {n}, repeat {r}: {e}");
                    failures += 1;
                }
            }
        }
        let kkt = |f: fn(&etrs_core::KktResiduals) -> f64| {
            mean(&ok.iter().filter_map(|(r, _)| r.kkt.as_ref().map(f)).collect::<Vec<_>>())
        };
        rows.push(BenchRow {
            n,
            runs: args.repeats,
            failures,
            kkt1: kkt(|k| k.kkt1),
            kkt2: kkt(|k| k.kkt2.abs()),
            kkt3: kkt(|k| k.kkt3.abs()),
            seconds: mean(&ok.iter().map(|(_, s)| *s).collect::<Vec<_>>()),
            matvecs: mean(&ok.iter().map(|(r, _)| r.diagnostics.matvecs as f64).collect::<Vec<_>>()),
        });
    }
    Ok(rows)
}

pub const BENCH_COLUMNS: [&str; 8] = ["n", "runs", "failures", "kkt1", "kkt2", "kkt3", "time_s", "matvecs"];

pub fn format_bench_text(rows: &[BenchRow]) -> String {
    let mut out = format!(
        "{:>8} {:>5} {:>8} {:>10} {:>10} {:>10} {:>10} {:>9}\n",
        BENCH_COLUMNS[0],
        BENCH_COLUMNS[1],
        BENCH_COLUMNS[2],
        BENCH_COLUMNS[3],
        BENCH_COLUMNS[4],
        BENCH_COLUMNS[5],
        BENCH_COLUMNS[6],
        BENCH_COLUMNS[7]
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>8} {:>5} {:>8} {:>10.2e} {:>10.2e} {:>10.2e} {:>10.3} {:>9.1}",
            r.n, r.runs, r.failures, r.kkt1, r.kkt2, r.kkt3, r.seconds, r.matvecs
        );
    }
    out
}

pub fn format_bench_csv(rows: &[BenchRow]) -> String {
    let mut out = BENCH_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:e},{:e},{:e},{:e},{}",
            r.n, r.runs, r.failures, r.kkt1, r.kkt2, r.kkt3, r.seconds, r.matvecs
        );
    }
    out
}

pub fn cmd_bench(args: &BenchArgs) -> Result<Vec<BenchRow>, Error> {
    let rows = bench_rows(args)?;
    print!("{}", format_bench_text(&rows));
    if let Some(path) = &args.csv {
        let mut f = fs::File::create(path)?;
        f.write_all(format_bench_csv(&rows).as_bytes())?;
    }
    Ok(rows)
}
