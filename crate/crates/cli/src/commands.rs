use std::path::Path;
use std::time::Instant;

use h2s_core::bank::{bank_file_name, load_bank_dir, SampleBank};
use h2s_core::chain::{ChainStore, RunLength};
use h2s_core::model::{Depth, ModelSpec};
use h2s_core::report::{compare_chains, export_curves, TimingTable};
use h2s_core::stage1::Stage1Timing;
use h2s_core::{
    io, run_full_gibbs, run_stage1_all, run_stage2, simulate as simulate_data, Dataset, GibbsSettings, H2sError,
    Result, SimConfig, Stage2Settings,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::{BankExportArgs, CompareArgs, FullArgs, IngestArgs, ModelArgs, SimulateArgs, Stage1Args, Stage2Args};

/// Provenance block attached to every output.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub command: &'static str,
    pub seed: Option<u64>,
    /// SHA-256 of the resolved settings as JSON.
    pub config_hash: String,
    pub tool_version: &'static str,
    pub settings: serde_json::Value,
}

fn metadata<T: Serialize>(command: &'static str, seed: Option<u64>, settings: &T) -> Metadata {
    let settings = serde_json::to_value(settings).unwrap_or_default();
    let canonical = serde_json::to_string(&settings).unwrap_or_default();
    let hash = Sha256::digest(canonical.as_bytes());
    Metadata {
        command,
        seed,
        config_hash: format!("{hash:x}"),
        tool_version: env!("CARGO_PKG_VERSION"),
        settings,
    }
}

fn write_metadata(dir: &Path, meta: &Metadata) -> Result<()> {
    io::write_json(&dir.join("metadata.json"), meta)
}

fn depth(d: u8) -> Result<Depth> {
    Depth::try_from(d)
}

fn model_spec(args: &ModelArgs, inferred: Depth) -> Result<ModelSpec> {
    let mut spec = match &args.model {
        Some(p) => io::read_json::<ModelSpec>(p)?,
        None => ModelSpec::for_depth(args.depth.map(depth).transpose()?.unwrap_or(inferred)),
    };
    if let Some(d) = args.depth {
        let d = depth(d)?;
        if d != spec.depth {
            return Err(H2sError::input(format!(
                "--depth {d} disagrees with the model file's depth {}",
                spec.depth
            )));
        }
    }
    if let Some(v) = args.stage1_prior_variance {
        spec.stage1_theta_prior.variance = v;
    }
    spec.validate()?;
    Ok(spec)
}

fn run_length(iterations: u64, burn_in: Option<u64>, thin: u64) -> Result<RunLength> {
    match burn_in {
        Some(b) => RunLength::new(iterations, b, thin),
        None => {
            let r = RunLength::with_default_burn_in(iterations)?;
            RunLength::new(iterations, r.burn_in, thin)
        }
    }
}

fn with_metadata(meta: &Metadata, value: impl Serialize) -> serde_json::Value {
    let mut v = serde_json::to_value(value).unwrap_or_default();
    if let serde_json::Value::Object(m) = &mut v {
        m.insert("metadata".into(), serde_json::to_value(meta).unwrap_or_default());
    }
    v
}

fn save_chain(store: &mut ChainStore, dir: &Path, meta: &Metadata) -> Result<()> {
    store
        .meta
        .extra
        .insert("config_hash".into(), meta.config_hash.clone().into());
    store.save(dir)?;
    write_metadata(dir, meta)
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let d = depth(a.depth)?;
    let mut cfg = match d {
        Depth::Three => SimConfig::three_level(a.groups, a.per_group, a.seed),
        Depth::Four => SimConfig::four_level(a.groups, a.cells, a.per_cell, a.seed),
    };
    cfg.true_mu = a.mu;
    cfg.true_tau2 = a.tau2;
    cfg.sigma2_mean = a.sigma2_mean;
    cfg.sigma2_var = a.sigma2_var;
    let (ds, truth) = simulate_data(&cfg)?;
    let meta = metadata("simulate", Some(a.seed), a);
    io::create_dir_all(&a.out)?;
    ds.write_csv(&a.out.join("data.csv"))?;
    io::write_json(&a.out.join("truth.json"), &with_metadata(&meta, &truth))?;
    write_metadata(&a.out, &meta)?;
    println!(
        "wrote {} groups to {}",
        ds.n_groups(),
        a.out.join("data.csv").display()
    );
    Ok(())
}

#[derive(Serialize)]
struct GroupSummary {
    group_id: u64,
    cells: usize,
    observations: usize,
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    let ds = Dataset::read_csv(&a.data, a.depth.map(depth).transpose()?)?;
    ds.validate()?;
    let groups: Vec<GroupSummary> = ds
        .groups
        .iter()
        .map(|g| GroupSummary {
            group_id: g.group_id,
            cells: g.cell_ids().len(),
            observations: g.n_observations(),
        })
        .collect();
    let summary = json!({
        "depth": ds.depth,
        "groups": ds.n_groups(),
        "observations": groups.iter().map(|g| g.observations).sum::<usize>(),
        "per_group": groups,
    });
    if let Some(out) = &a.out {
        ds.write_csv(out)?;
    }
    println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
    Ok(())
}

pub fn full(a: &FullArgs) -> Result<()> {
    let ds = Dataset::read_csv(&a.data, a.model.depth.map(depth).transpose()?)?;
    let spec = model_spec(&a.model, ds.depth)?;
    let run = run_length(a.iterations, a.burn_in, a.thin)?;
    let t0 = Instant::now();
    let mut store = run_full_gibbs(&ds, &spec, &GibbsSettings { run, seed: a.seed, parallel_groups: a.parallel })?;
    let secs = t0.elapsed().as_secs_f64();
    let meta = metadata("full", Some(a.seed), a);
    save_chain(&mut store, &a.out, &meta)?;
    io::write_json(&a.out.join("timing.json"), &json!({ "full_total_seconds": secs }))?;
    println!("full Gibbs: {} retained draws in {secs:.2}s -> {}", store.len(), a.out.display());
    Ok(())
}

pub fn stage1(a: &Stage1Args) -> Result<()> {
    let ds = Dataset::read_csv(&a.data, a.model.depth.map(depth).transpose()?)?;
    let spec = model_spec(&a.model, ds.depth)?;
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let run = run_stage1_all(&ds, &spec, &a.draws, a.burn_in, a.thin, a.seed, workers)?;
    let timing = run.timing();
    let banks = run.into_banks()?;
    io::create_dir_all(&a.out)?;
    for b in &banks {
        b.save(&a.out.join(bank_file_name(b.group_id)))?;
    }
    // workers change timing only, so they stay out of the hash
    let mut settings = a.clone();
    settings.workers = None;
    let meta = metadata("stage1", Some(a.seed), &settings);
    io::write_json(&a.out.join("timing.json"), &timing)?;
    write_metadata(&a.out, &meta)?;
    println!(
        "stage 1: {} banks, average {:.3}s per group on {workers} workers -> {}",
        banks.len(),
        timing.average_per_group_seconds,
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Stage2Timing {
    stage2_seconds: f64,
    #[serde(default)]
    stage1: Option<Stage1Timing>,
}

pub fn stage2(a: &Stage2Args) -> Result<()> {
    let banks = load_bank_dir(&a.banks)?;
    let first = &banks[0];
    let mut spec = model_spec(&a.model, first.depth())?;
    if a.model.model.is_none() && a.model.stage1_prior_variance.is_none() {
        spec.stage1_theta_prior = first.meta.stage1_theta_prior;
    }
    let mut settings = Stage2Settings::new(run_length(a.iterations, a.burn_in, a.thin)?, a.seed);
    settings.mode = a.mode.parse()?;
    settings.parallel_groups = a.parallel;
    let t0 = Instant::now();
    let (mut store, stats) = run_stage2(&banks, &spec, &settings)?;
    let secs = t0.elapsed().as_secs_f64();

    let meta = metadata("stage2", Some(a.seed), a);
    save_chain(&mut store, &a.out, &meta)?;
    io::write_json(&a.out.join("mh_stats.json"), &with_metadata(&meta, &stats))?;
    let stage1_timing = a.banks.join("timing.json");
    let stage1 = if stage1_timing.exists() {
        Some(io::read_json::<Stage1Timing>(&stage1_timing)?)
    } else {
        None
    };
    io::write_json(&a.out.join("timing.json"), &Stage2Timing { stage2_seconds: secs, stage1 })?;
    println!(
        "stage 2: {} retained draws in {secs:.2}s, minimum acceptance rate {:.3} -> {}",
        store.len(),
        stats.min_rate(),
        a.out.display()
    );
    Ok(())
}

fn timing_table(reference: &Path, alternative: &Path) -> Option<TimingTable> {
    #[derive(Deserialize)]
    struct FullTiming {
        full_total_seconds: f64,
    }
    let full = reference.join("timing.json");
    let two = alternative.join("timing.json");
    if !full.exists() || !two.exists() {
        return None;
    }
    let full: FullTiming = io::read_json(&full).ok()?;
    let two: Stage2Timing = io::read_json(&two).ok()?;
    let s1 = two.stage1?.average_per_group_seconds;
    Some(TimingTable::new(s1, two.stage2_seconds, full.full_total_seconds))
}

pub fn compare(a: &CompareArgs) -> Result<()> {
    let reference = ChainStore::load(&a.reference)?;
    let alternative = ChainStore::load(&a.alternative)?;
    let timing = timing_table(&a.reference, &a.alternative);
    let (mut report, curves) = compare_chains(&reference, &alternative, a.grid, timing)?;
    let meta = metadata("compare", None, a);
    report
        .meta
        .insert("metadata".into(), serde_json::to_value(&meta).unwrap_or_default());
    io::create_dir_all(&a.out)?;
    io::write_json(&a.out.join("report.json"), &report)?;
    let text = report.to_text();
    io::write_atomic(&a.out.join("report.txt"), |w| w.write_all(text.as_bytes()))?;
    export_curves(&a.out.join("curves"), &curves)?;
    write_metadata(&a.out, &meta)?;
    print!("{text}");
    Ok(())
}

pub fn bank_export(a: &BankExportArgs) -> Result<()> {
    let bank = SampleBank::load(&a.bank)?;
    bank.export_csv(&a.out)?;
    println!("{} rows x {} columns -> {}", bank.rows(), bank.columns().len(), a.out.display());
    Ok(())
}
