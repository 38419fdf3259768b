use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use tfac::aggregate::{aggregate_probes, sweep_k, write_sweep_csv, AggregationMethod, SweepColumn};
use tfac::data::{Dataset, SubjectId, Template};
use tfac::hac::{hac_cluster, Clustering, LinkageSpec, StopRule};
use tfac::io::{load_dataset, load_templates, save_dataset, save_templates};
use tfac::metrics::{
    cmc_curve, pairwise_prf, score_probes, write_curve_csv, write_report_csv, Fusion, IdentReport, PairwiseScores,
    REPORT_COLUMNS,
};
use tfac::partition::{cluster_partitioned, partition_templates, KPolicy, PartitionScheme};
use tfac::svmassoc::{tfa_associate, AssocParams, AssociationSets, NegativePolicy, SvmParams};
use tfac::synth::{generate, probe_features, MultiModal, Split, SynthConfig};

use crate::args::*;

pub const EMBEDDINGS_FILE: &str = "embeddings.femb";
pub const METADATA_FILE: &str = "metadata.csv";
pub const SPLIT_FILE: &str = "split.csv";
pub const PROBES_FEMB: &str = "probes.femb";
pub const PROBES_INDEX: &str = "probes.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn run(command: &Command) -> Result<()> {
    let config = serde_json::to_value(command)?;
    let resolved = config
        .as_object()
        .and_then(|o| o.get(command.name()))
        .cloned()
        .unwrap_or(config);
    eprintln!("tfac {}: resolved config {}", command.name(), resolved);
    let mut run = Run {
        command: command.name(),
        config: resolved,
        outputs: Vec::new(),
        input: None,
    };
    match command {
        Command::Synth(a) => synth(a, &mut run),
        Command::Cluster(a) => cluster(a, &mut run),
        Command::EvalCluster(a) => eval_cluster(a, &mut run),
        Command::Aggregate(a) => aggregate(a, &mut run),
        Command::Identify(a) => identify(a, &mut run),
        Command::SweepK(a) => sweep(a, &mut run),
        Command::Assoc(a) => assoc(a, &mut run),
    }
}

/// Bookkeeping for the manifest written next to a run's outputs.
struct Run {
    command: &'static str,
    config: serde_json::Value,
    outputs: Vec<String>,
    input: Option<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a serde_json::Value,
    config_digest: String,
    input_provenance: Option<&'a str>,
    outputs: &'a [String],
}

impl Run {
    fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.config.to_string().as_bytes()))
    }

    fn write(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn finish(&self, dir: &Path) -> Result<()> {
        let manifest = Manifest {
            tool: "tfac",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config: &self.config,
            config_digest: self.digest(),
            input_provenance: self.input.as_deref(),
            outputs: &self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
    }
}

fn out_dir(path: &Path) -> Result<&Path> {
    fs::create_dir_all(path).with_context(|| format!("--out: cannot create {}", path.display()))?;
    Ok(path)
}

fn load(args: &DataArgs, run: &mut Run) -> Result<Dataset> {
    let (e, m) = (args.data.join(EMBEDDINGS_FILE), args.data.join(METADATA_FILE));
    let d = load_dataset(&e, &m).with_context(|| format!("--data: cannot load {} and {}", e.display(), m.display()))?;
    run.input = Some(d.provenance.clone());
    Ok(d)
}

fn load_split(args: &DataArgs) -> Result<Split> {
    let p = args.data.join(SPLIT_FILE);
    let f = fs::File::open(&p).with_context(|| format!("--data: cannot open {}", p.display()))?;
    Split::read_csv(f).with_context(|| format!("--data: bad split file {}", p.display()))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> tfac::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn synth(a: &SynthArgs, run: &mut Run) -> Result<()> {
    let mut skin_tone_weights = [0.0; 6];
    skin_tone_weights.copy_from_slice(&a.skin_weights);
    let config = SynthConfig {
        num_subjects: a.subjects,
        templates_per_subject: a.templates_per_subject,
        media_per_template: a.media_per_template,
        frames_per_media: a.frames_per_media,
        dim: a.dim,
        within_subject_noise: a.noise,
        media_noise: a.media_noise,
        image_fraction: a.image_fraction,
        male_probability: a.male_probability,
        skin_tone_weights,
        unknown_attribute_fraction: a.unknown_fraction,
        openset_fraction: a.openset_fraction,
        galleries: a.galleries as usize,
        multimodal: a.multimodal.then_some(MultiModal {
            probe_fraction: a.mm_probe_fraction,
            second_mode_share: a.mm_share,
            offset: a.mm_offset,
            noise: a.mm_noise,
        }),
        seed: a.seed,
    };
    let data = generate(&config)?;
    let dir = out_dir(&a.out)?;
    save_dataset(&data.dataset, &dir.join(EMBEDDINGS_FILE), &dir.join(METADATA_FILE))
        .with_context(|| format!("cannot write dataset to {}", dir.display()))?;
    run.outputs.push(EMBEDDINGS_FILE.into());
    run.outputs.push(METADATA_FILE.into());
    run.write(dir, SPLIT_FILE, &csv_bytes(|b| data.split.write_csv(b))?)?;
    run.finish(dir)?;
    println!(
        "wrote {} samples, {} templates, {} subjects to {}",
        data.dataset.samples.len(),
        data.split.entries.len(),
        a.subjects,
        dir.display()
    );
    Ok(())
}

fn truth_of(templates: &[Template]) -> Result<HashMap<u64, SubjectId>> {
    templates
        .iter()
        .map(|t| {
            t.subject_id
                .map(|s| (t.template_id, s))
                .with_context(|| format!("template {} has no subject label", t.template_id))
        })
        .collect()
}

fn print_scores(label: &str, n: usize, clusters: usize, s: &PairwiseScores) {
    println!(
        "{label}: items={n} clusters={clusters} precision={:.6} recall={:.6} f1={:.6}",
        s.precision, s.recall, s.f1
    );
}

fn cluster(a: &ClusterArgs, run: &mut Run) -> Result<()> {
    let dataset = load(&a.input, run)?;
    let templates = dataset.templates(a.normalize)?;
    let truth = truth_of(&templates)?;
    let dir = out_dir(&a.out)?;
    let clustering = match &a.partition {
        None => {
            let stop = match (a.k, a.threshold) {
                (Some(k), _) => StopRule::NumClusters(k as usize),
                (None, Some(t)) => StopRule::DistanceThreshold(t),
                (None, None) => StopRule::NumClusters(truth.values().collect::<BTreeSet<_>>().len()),
            };
            let ids: Vec<u64> = templates.iter().map(|t| t.template_id).collect();
            let points: Vec<&[f32]> = templates.iter().map(|t| t.primary().as_slice()).collect();
            let spec = LinkageSpec::new(a.linkage.into(), a.metric.into(), stop);
            let c = hac_cluster(&ids, &points, &spec).context("--k/--threshold")?;
            run.write(dir, "merges.csv", &csv_bytes(|b| c.write_trace_csv(b))?)?;
            c
        }
        Some(scheme) => {
            let scheme: PartitionScheme = scheme.parse().context("--partition")?;
            let parts = partition_templates(&templates, &scheme);
            let policy = match (a.k, a.threshold) {
                (Some(k), _) => KPolicy::Proportional(k as usize),
                (None, Some(t)) => KPolicy::Threshold(t),
                (None, None) => KPolicy::GroundTruth,
            };
            let pc = cluster_partitioned(&templates, &parts, a.linkage.into(), a.metric.into(), policy)?;
            for w in &pc.warnings {
                eprintln!("warning: {w}");
            }
            if !parts.skipped.is_empty() {
                println!("skipped {} templates with unknown attributes", parts.skipped.len());
            }
            for (label, c) in &pc.per_partition {
                let s = pairwise_prf(c, &truth)?;
                print_scores(&format!("partition {label}"), c.item_ids().len(), c.num_clusters(), &s);
            }
            pc.combined
        }
    };
    run.write(dir, "clustering.csv", &csv_bytes(|b| clustering.write_csv(b))?)?;
    run.finish(dir)?;
    let s = pairwise_prf(&clustering, &truth)?;
    print_scores("pairwise", clustering.item_ids().len(), clustering.num_clusters(), &s);
    Ok(())
}

fn eval_cluster(a: &EvalClusterArgs, run: &mut Run) -> Result<()> {
    let dataset = load(&a.input, run)?;
    let truth = truth_of(&dataset.templates(false)?)?;
    let f = fs::File::open(&a.clustering).with_context(|| format!("--clustering: cannot open {}", a.clustering.display()))?;
    let c = Clustering::read_csv(f).with_context(|| format!("--clustering: bad file {}", a.clustering.display()))?;
    let s = pairwise_prf(&c, &truth)?;
    print_scores("pairwise", c.item_ids().len(), c.num_clusters(), &s);
    println!(
        "pairs: same_cluster={} same_class={} both={}",
        s.counts.same_cluster, s.counts.same_class, s.counts.both
    );
    Ok(())
}

fn aggregate(a: &AggregateArgs, run: &mut Run) -> Result<()> {
    let dataset = load(&a.input, run)?;
    let split = load_split(&a.input)?;
    let probes = probe_features(&dataset, &split)?;
    let method = match a.method {
        MethodArg::Mean => AggregationMethod::Mean,
        MethodArg::Cluster => AggregationMethod::Cluster(a.k as usize),
    };
    let templates = aggregate_probes(&probes, method, &a.kmeans.params(), a.seed)?;
    let dir = out_dir(&a.out)?;
    save_templates(&templates, &dir.join(PROBES_FEMB), &dir.join(PROBES_INDEX))
        .with_context(|| format!("cannot write templates to {}", dir.display()))?;
    run.outputs.push(PROBES_FEMB.into());
    run.outputs.push(PROBES_INDEX.into());
    run.finish(dir)?;
    let reps: usize = templates.iter().map(|t| t.representations().len()).sum();
    println!("aggregated {} probe templates into {reps} representations", templates.len());
    Ok(())
}

type Evaluation = (Dataset, Split, Vec<Vec<Template>>, Vec<Template>);

fn galleries_and_probes(input: &DataArgs, run: &mut Run) -> Result<Evaluation> {
    let dataset = load(input, run)?;
    let split = load_split(input)?;
    let (galleries, probes) = split.select(&dataset.templates(false)?)?;
    if galleries.is_empty() {
        bail!("--data: split has no gallery templates");
    }
    Ok((dataset, split, galleries, probes))
}

fn print_report(rows: &[(String, IdentReport)]) {
    print!("{:<10}", "");
    for c in REPORT_COLUMNS {
        print!(" {c:>14}");
    }
    println!();
    for (label, r) in rows {
        print!("{label:<10}");
        for c in r.cells() {
            let v = c.parse::<f64>().map(|v| format!("{v:.4}")).unwrap_or(c);
            print!(" {v:>14}");
        }
        println!();
    }
}

fn identify(a: &IdentifyArgs, run: &mut Run) -> Result<()> {
    let (_, _, galleries, mut probes) = galleries_and_probes(&a.input, run)?;
    if let Some(p) = &a.probes {
        probes = load_templates(&p.join(PROBES_FEMB), &p.join(PROBES_INDEX))
            .with_context(|| format!("--probes: cannot load templates from {}", p.display()))?;
    }
    let fusion: Fusion = a.fusion.into();
    let dir = out_dir(&a.out)?;
    let mut rows = Vec::new();
    for (g, gallery) in galleries.iter().enumerate() {
        let table = score_probes(&probes, gallery, fusion)?;
        let report = IdentReport::evaluate(&table)?;
        run.write(dir, &format!("scores_gallery{}.csv", g + 1), &csv_bytes(|b| table.write_csv(b))?)?;
        let curve = cmc_curve(&table)?;
        run.write(dir, &format!("cmc_gallery{}.csv", g + 1), &csv_bytes(|b| write_curve_csv(&curve, b))?)?;
        rows.push((format!("Gallery {}", g + 1), report));
    }
    let reports: Vec<IdentReport> = rows.iter().map(|r| r.1.clone()).collect();
    rows.push(("Average".to_string(), IdentReport::average(&reports)?));
    run.write(dir, "report.csv", &csv_bytes(|b| write_report_csv(&rows, b))?)?;
    run.finish(dir)?;
    print_report(&rows);
    Ok(())
}

fn sweep(a: &SweepKArgs, run: &mut Run) -> Result<()> {
    if a.k_min > a.k_max {
        bail!("--k-min {} exceeds --k-max {}", a.k_min, a.k_max);
    }
    let (dataset, split, galleries, _) = galleries_and_probes(&a.input, run)?;
    let probes = probe_features(&dataset, &split)?;
    let fusion: Fusion = a.fusion.into();
    let rows = sweep_k(
        &probes,
        a.k_min as usize..=a.k_max as usize,
        &a.kmeans.params(),
        a.seed,
        |templates| {
            galleries
                .iter()
                .map(|g| IdentReport::evaluate(&score_probes(templates, g, fusion)?))
                .collect()
        },
    )?;
    let dir = out_dir(&a.out)?;
    for g in 0..galleries.len() {
        let name = format!("sweep_gallery{}.csv", g + 1);
        run.write(dir, &name, &csv_bytes(|b| write_sweep_csv(&rows, SweepColumn::Gallery(g), b))?)?;
    }
    run.write(dir, "sweep_average.csv", &csv_bytes(|b| write_sweep_csv(&rows, SweepColumn::Average, b))?)?;
    run.finish(dir)?;
    let best = rows
        .iter()
        .map(|r| (r.k, r.average.rank(1).unwrap_or(0.0)))
        .fold(None::<(usize, f64)>, |acc, x| match acc {
            Some(b) if b.1 >= x.1 => Some(b),
            _ => Some(x),
        });
    for r in &rows {
        println!("k={:<3} rank1={:.4}", r.k, r.average.rank(1).unwrap_or(0.0));
    }
    if let Some((k, rate)) = best {
        println!("best k={k} rank1={rate:.4}");
    }
    Ok(())
}

fn read_sets(path: &PathBuf, index: &HashMap<u64, usize>) -> Result<(AssociationSets, Vec<usize>)> {
    let f = fs::File::open(path).with_context(|| format!("--sets: cannot open {}", path.display()))?;
    let mut rdr = csv::Reader::from_reader(f);
    let header = rdr.headers()?.clone();
    if header.iter().ne(["sample_id", "set"]) {
        bail!("--sets: {} must have header sample_id,set", path.display());
    }
    let mut sets = AssociationSets::default();
    let mut candidates = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let id: u64 = rec[0]
            .parse()
            .with_context(|| format!("--sets: {} line {line}: bad sample id {:?}", path.display(), &rec[0]))?;
        let &row = index
            .get(&id)
            .with_context(|| format!("--sets: {} line {line}: unknown sample {id}", path.display()))?;
        match &rec[1] {
            "positive" => sets.positives.push(row),
            "video_negative" => sets.within_video_negatives.push(row),
            "background" => sets.background.push(row),
            "candidate" => candidates.push(row),
            s => bail!("--sets: {} line {line}: unknown set {s:?}", path.display()),
        }
    }
    Ok((sets, candidates))
}

fn assoc(a: &AssocArgs, run: &mut Run) -> Result<()> {
    let dataset = load(&a.input, run)?;
    let index: HashMap<u64, usize> = dataset.samples.iter().enumerate().map(|(i, s)| (s.sample_id, i)).collect();
    let (sets, candidates) = read_sets(&a.sets, &index)?;
    let features: Vec<_> = dataset.samples.iter().map(|s| s.embedding.clone()).collect();
    let params = AssocParams {
        rounds: a.rounds,
        svm: SvmParams {
            cp: a.cp,
            cn: a.cn,
            bias: !a.no_bias,
            ..Default::default()
        },
        accept_margin: a.margin,
        policy: if a.assoc_model == 1 {
            NegativePolicy::Union
        } else {
            NegativePolicy::BackgroundFallback
        },
    };
    let result = tfa_associate(&features, &sets, &candidates, &params)?;
    let initial: BTreeSet<usize> = sets.positives.iter().copied().collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sample_id", "initial"])?;
    for &i in &result.positives {
        w.write_record([dataset.samples[i].sample_id.to_string(), initial.contains(&i).to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!(e.to_string()))?;
    let dir = out_dir(&a.out)?;
    run.write(dir, "associated.csv", &bytes)?;
    run.finish(dir)?;
    println!(
        "positives: {} -> {} after {} rounds (sizes {:?})",
        initial.len(),
        result.positives.len(),
        result.rounds_run,
        result.sizes
    );
    Ok(())
}
