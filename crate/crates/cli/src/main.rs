use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use hemlet_core::engine::{run_with, DataflowMode, RunOptions, SelfCheck, SimReport};
use hemlet_core::glp::{build_layersets, build_mapping, mapping_stats, MappingKind};
use hemlet_core::hwconfig::{validate, ConfigFile, SystemConfig};
use hemlet_core::metrics::{
    normalize, normalized_csv, normalized_dat, to_csv, Baseline, SweepPoint, CSV_HEADER, REFERENCE_TOPS,
    REFERENCE_TOPS_PER_W,
};
use hemlet_core::numerics::attention_self_check;
use hemlet_core::sweep::SweepGrid;
use hemlet_core::workload::ViTModelSpec;
use hemlet_core::{Error, Result};

/// Mapping compiler and simulator for ViT inference on CIM chiplet packages.
#[derive(Parser, Debug)]
#[command(name = "hemlet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a configuration against a model.
    Validate(Common),
    /// Build the layer sets and physical mapping.
    Map(Common),
    /// Simulate one inference.
    Run(Common),
    /// Simulate every grid point of chip configuration by bandwidth by model.
    Sweep(Common),
    /// Throughput and efficiency of ViT-L/16 on A32D16 at 32 GB/s next to published reference figures.
    Report(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML or JSON system description. Falls back to HEMLET_REF_CONFIG, then to the built-in reference.
    #[arg(long, env = "HEMLET_REF_CONFIG")]
    config: Option<PathBuf>,
    /// vit-s, vit-b or vit-l. Defaults to the config's [model] section.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value = "glp")]
    mapping: MappingKind,
    #[arg(long, default_value = "hemlet")]
    mode: DataflowMode,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Static-layer inputs start resident on the ACIM chiplets.
    #[arg(long)]
    peak: bool,
    /// Write every simulated task to events.jsonl.
    #[arg(long)]
    event_log: bool,
    /// Serialize transfers that share a chiplet port.
    #[arg(long)]
    link_contention: bool,
    /// Worker threads for sweeps.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<(ConfigFile, String)> {
        match &self.config {
            Some(p) => Ok((ConfigFile::load(p)?, p.display().to_string())),
            None => Ok((ConfigFile::reference(), "<built-in reference>".into())),
        }
    }

    fn models(&self, file: &ConfigFile) -> Result<Vec<ViTModelSpec>> {
        match (&self.model, &file.model) {
            (Some(name), _) => ViTModelSpec::preset(name)
                .map(|m| vec![m])
                .ok_or_else(|| Error::Model(format!("unknown model `{name}` (expected vit-s, vit-b or vit-l)"))),
            (None, Some(m)) => Ok(vec![m.clone()]),
            (None, None) => Ok(ViTModelSpec::table()),
        }
    }

    fn model(&self, file: &ConfigFile) -> Result<ViTModelSpec> {
        let models = self.models(file)?;
        match models.as_slice() {
            [one] => Ok(one.clone()),
            _ => Err(Error::Model("no model given: pass --model or add a [model] section".into())),
        }
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            peak: self.peak,
            event_log: self.event_log,
            link_contention: self.link_contention.then_some(true),
        }
    }

    fn manifest(&self, command: &str, config_source: &str) -> serde_json::Value {
        json!({
            "command": command,
            "config": config_source,
            "model": self.model,
            "mapping": self.mapping.to_string(),
            "mode": self.mode.to_string(),
            "seed": self.seed,
            "peak": self.peak,
            "event_log": self.event_log,
            "link_contention": self.link_contention,
            "jobs": self.jobs,
        })
    }
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(dir, name, text)
}

/// Wall-clock data lives only here so every other output is reproducible.
fn write_meta(dir: &Path, manifest: serde_json::Value) -> Result<()> {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    let meta = json!({
        "manifest": manifest,
        "unix_time_s": now.as_secs(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    write_json(dir, "meta.json", &meta)
}

fn prepare(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn seeded_check(spec: &ViTModelSpec, cfg: &SystemConfig, seed: u64) -> Result<SelfCheck> {
    let err = attention_self_check(
        spec.seq_len as usize,
        spec.head_dim() as usize,
        cfg.system.block_tokens as usize,
        seed,
    )?;
    Ok(SelfCheck {
        name: "blocked_attention_matches_dense".into(),
        passed: err <= 1e-6,
        detail: format!("seed {seed}: max abs error {err:.3e} at f32"),
    })
}

fn cmd_validate(args: &Common) -> Result<()> {
    let (file, source) = args.load()?;
    let cfg = file.system();
    let mut diagnostics = Vec::new();
    let models = args.models(&file)?;
    for spec in &models {
        match validate(&cfg, spec) {
            Ok(()) => {}
            Err(Error::Config(d)) => diagnostics.extend(d),
            Err(e) => return Err(e),
        }
    }
    diagnostics.sort_by(|a, b| (&a.path, &a.message).cmp(&(&b.path, &b.message)));
    diagnostics.dedup();
    if diagnostics.is_empty() {
        let names: Vec<_> = models.iter().map(|m| m.name.as_str()).collect();
        println!("{source}: ok for {}", names.join(", "));
        Ok(())
    } else {
        Err(Error::Config(diagnostics))
    }
}

fn cmd_map(args: &Common) -> Result<()> {
    let (file, source) = args.load()?;
    let cfg = file.system();
    let spec = args.model(&file)?;
    validate(&cfg, &spec)?;
    prepare(&args.out)?;
    let sets = match args.mapping {
        MappingKind::Glp => {
            let sets = build_layersets(&spec, cfg.acim.group_size)?;
            sets.check(&spec)?;
            write_json(&args.out, "layersets.json", &sets)?;
            Some(sets)
        }
        MappingKind::Layerwise => None,
    };
    let plan = build_mapping(&spec, &cfg, args.mapping)?;
    write_json(&args.out, "mapping.json", &plan)?;
    let stats = mapping_stats(&plan, sets.as_ref())?;
    write_json(&args.out, "mapping_stats.json", &stats)?;
    let table = stats.to_table();
    write(&args.out, "mapping_stats.txt", &table)?;
    write_meta(&args.out, args.manifest("map", &source))?;
    if let Some(s) = &sets {
        println!(
            "{}: FFN sets {}, MHA sets {}, baseline layers {}",
            spec.name,
            s.ffn_sets(),
            s.mha_sets(),
            s.baseline_set.len()
        );
    }
    print!("{table}");
    Ok(())
}

fn simulate_one(args: &Common, spec: &ViTModelSpec, cfg: &SystemConfig) -> Result<SimReport> {
    let mut report = run_with(spec, cfg, args.mapping, args.mode, &args.options())?;
    report.checks.push(seeded_check(spec, cfg, args.seed)?);
    Ok(report)
}

fn fail_on_checks(report: &SimReport) -> Result<()> {
    let failed: Vec<_> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Invariant(format!("self-checks failed: {}", failed.join(", "))))
    }
}

fn cmd_run(args: &Common) -> Result<()> {
    let (file, source) = args.load()?;
    let cfg = file.system();
    let spec = args.model(&file)?;
    prepare(&args.out)?;
    let report = simulate_one(args, &spec, &cfg)?;
    write_json(&args.out, "report.json", &report)?;
    let point = SweepPoint::new(report.clone(), args.mapping);
    write(&args.out, "result.csv", format!("{CSV_HEADER}\n{}\n", point.csv_row()))?;
    if args.event_log {
        let mut f = std::io::BufWriter::new(fs::File::create(args.out.join("events.jsonl"))?);
        report.write_event_log(&mut f)?;
    }
    write_meta(&args.out, args.manifest("run", &source))?;
    println!(
        "{} {} {} {}: latency {:.3} ms, energy {:.3} mJ, {:.2} TOPS, {:.2} TOPS/W",
        report.model,
        report.config,
        report.mapping,
        report.mode,
        report.latency_ns / 1e6,
        report.energy_pj / 1e9,
        report.tops,
        report.tops_per_w
    );
    for c in &report.checks {
        println!("  [{}] {}: {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail);
    }
    fail_on_checks(&report)
}

fn anchor_lines(tops: f64, tops_per_w: f64) -> String {
    format!(
        "| metric | simulated | published reference |\n|---|---|---|\n| TOPS | {tops:.2} | {REFERENCE_TOPS} |\n| TOPS/W | {tops_per_w:.2} | {REFERENCE_TOPS_PER_W} |\n"
    )
}

fn sweep_summary(points: &[SweepPoint], seed_check: &SelfCheck) -> Result<String> {
    let mut md = String::from("# Sweep summary\n\n");
    let _ = writeln!(md, "Seeded attention check: {} ({})\n", if seed_check.passed { "pass" } else { "FAIL" }, seed_check.detail);
    md.push_str("## Speedup over layer-wise NATIVE\n\n| model | config | bw GB/s | GLP NATIVE | GLP HEMLET | HEMLET energy overhead vs layer-wise |\n|---|---|---|---|---|---|\n");
    let rows = normalize(points, &Baseline::same_point())?;
    let find = |p: &SweepPoint, m: MappingKind, d: DataflowMode| {
        points
            .iter()
            .find(|q| q.model == p.model && q.config == p.config && q.bw_gbps == p.bw_gbps && q.mapping == m && q.mode == d)
    };
    for p in points.iter().filter(|p| p.mapping == MappingKind::Layerwise && p.mode == DataflowMode::Native) {
        let norm = |m, d| {
            rows.iter()
                .find(|r| r.model == p.model && r.config == p.config && r.bw_gbps == p.bw_gbps && r.mapping == m && r.mode == d)
                .map(|r| 1.0 / r.latency)
        };
        let overhead = match (find(p, MappingKind::Glp, DataflowMode::Hemlet), find(p, MappingKind::Layerwise, DataflowMode::Hemlet)) {
            (Some(g), Some(l)) => format!("{:.1}%", (g.report.energy_pj / l.report.energy_pj - 1.0) * 100.0),
            _ => "n/a".into(),
        };
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.2}x")).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} |",
            p.model,
            p.config,
            p.bw_gbps,
            fmt(norm(MappingKind::Glp, DataflowMode::Native)),
            fmt(norm(MappingKind::Glp, DataflowMode::Hemlet)),
            overhead
        );
    }
    if let Some(p) = points.iter().find(|p| {
        p.model == "ViT-L/16" && p.config == "A32D16" && p.bw_gbps == 32.0 && p.mapping == MappingKind::Glp && p.mode == DataflowMode::Hemlet
    }) {
        md.push_str("\n## ViT-L/16, A32D16, 32 GB/s, GLP + HEMLET\n\n");
        md.push_str(&anchor_lines(p.report.tops, p.report.tops_per_w));
    }
    Ok(md)
}

fn cmd_sweep(args: &Common) -> Result<()> {
    let (file, source) = args.load()?;
    let cfg = file.system();
    let mut grid = SweepGrid::standard(&cfg);
    if args.model.is_some() {
        grid.models = args.models(&file)?;
    }
    grid.options = args.options();
    grid.options.event_log = false;
    prepare(&args.out)?;
    let points = grid.run(args.jobs)?;
    let check = seeded_check(&ViTModelSpec::vit_b16(), &cfg, args.seed)?;
    write(&args.out, "sweep.csv", to_csv(&points))?;
    write_json(&args.out, "sweep.json", &points)?;
    let rows = normalize(&points, &Baseline::same_point())?;
    write(&args.out, "normalized.csv", normalized_csv(&rows))?;
    write(&args.out, "normalized.dat", normalized_dat(&rows))?;
    let summary = sweep_summary(&points, &check)?;
    write(&args.out, "report.md", &summary)?;
    write_meta(&args.out, args.manifest("sweep", &source))?;
    print!("{summary}");
    let failed: Vec<_> = points.iter().filter(|p| !p.report.all_checks_pass()).collect();
    if !failed.is_empty() || !check.passed {
        return Err(Error::Invariant(format!("{} sweep points failed self-checks", failed.len())));
    }
    Ok(())
}

fn cmd_report(args: &Common) -> Result<()> {
    let (file, source) = args.load()?;
    let cfg = file.system().with_chiplet_sizes(32, 16).with_bandwidth(32.0);
    let spec = ViTModelSpec::vit_l16();
    prepare(&args.out)?;
    let mut opts = args.options();
    opts.event_log = false;
    let report = run_with(&spec, &cfg, MappingKind::Glp, DataflowMode::Hemlet, &opts)?;
    let mut md = String::from("# ViT-L/16, A32D16, 32 GB/s, GLP + HEMLET\n\n");
    md.push_str(&anchor_lines(report.tops, report.tops_per_w));
    md.push_str("\nDevice constants are uncalibrated, so the comparison is for orientation only.\n");
    write(&args.out, "report.md", &md)?;
    write_json(&args.out, "report.json", &report)?;
    write_meta(&args.out, args.manifest("report", &source))?;
    print!("{md}");
    fail_on_checks(&report)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Validate(a) => cmd_validate(a),
        Command::Map(a) => cmd_map(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
