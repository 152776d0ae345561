//! Pipeline orchestration: a run directory holds stage artifacts and a
//! manifest with config snapshot, per-stage seeds, and content hashes.
//! Re-running a completed stage with unchanged inputs is a no-op.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ann::RPForest;
use crate::bowenc::{fit_sif, BowEncoder, FrequencyTable, SifConfig};
use crate::corpus::{
    build_vocab, corpus_stats, filter_corpus, generate_synthetic, ingest, write_corpus, Corpus,
    FilterConfig, SynthConfig,
};
use crate::embedding::EmbeddingTable;
use crate::encoder::{embed_playlists, PlaylistEncoder, BASE_BOW, BASE_SEQ2SEQ, BI_SEQ2SEQ, WEIGHTED_BOW};
use crate::error::{Error, Result};
use crate::genre::{
    annotate_playlists, annotate_songs, default_cluster_count, pca2d, validate_annotation,
    write_annotations_csv, write_pca_csv, GenreLexicon, VoteConfig,
};
use crate::probes::{
    make_bshift, make_gdpred, make_gmlpred, make_gpred, make_gspred, make_permute, make_plen,
    make_sc, train_probe, PermuteKind, ProbeReport, ProbeTrainConfig,
};
use crate::recsys::{eval_recommendation, LabelKind, RecEvalConfig, RecIndex, RecReport};
use crate::seq2seq::{train_autoencoder, Seq2seqConfig, TrainOutput};
use crate::song2vec::{train_skipgram, SkipgramConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

// ----------------------------------------------------------------------
// Config
// ----------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct IngestConfig {
    pub playlist_file: Option<PathBuf>,
    pub track_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenreStageConfig {
    /// Cluster count; zero means songs/125.
    pub clusters: usize,
    pub vote: VoteConfig,
    pub agree_frac: f64,
    /// Optional subgenre->parent CSV; the built-in lexicon otherwise.
    pub lexicon_file: Option<PathBuf>,
}

impl Default for GenreStageConfig {
    fn default() -> Self {
        GenreStageConfig {
            clusters: 0,
            vote: VoteConfig::default(),
            agree_frac: 0.7,
            lexicon_file: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeStageConfig {
    pub train: ProbeTrainConfig,
    pub sc_targets: usize,
    /// Cap on source playlists for the order probes.
    pub order_limit: Option<usize>,
    pub permute_fractions: Vec<f64>,
    pub permute_kinds: Vec<PermuteKind>,
    pub exclude_complement_variants: bool,
    /// Encoders to run the permute sweep on (other tasks use all four).
    pub permute_encoders: Vec<String>,
}

impl Default for ProbeStageConfig {
    fn default() -> Self {
        ProbeStageConfig {
            train: ProbeTrainConfig::default(),
            sc_targets: 50,
            order_limit: Some(1500),
            permute_fractions: vec![0.1, 0.25, 0.5, 0.75, 1.0],
            permute_kinds: vec![
                PermuteKind::Shuffle1,
                PermuteKind::Shuffle2,
                PermuteKind::Reversal,
            ],
            exclude_complement_variants: false,
            permute_encoders: vec![BASE_BOW.into(), WEIGHTED_BOW.into(), BASE_SEQ2SEQ.into()],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnStageConfig {
    pub n_trees: usize,
    pub leaf_size: usize,
    /// Zero means n_trees * k at query time.
    pub search_k: usize,
}

impl Default for AnnStageConfig {
    fn default() -> Self {
        AnnStageConfig {
            n_trees: 50,
            leaf_size: 32,
            search_k: 0,
        }
    }
}

/// Whole-pipeline configuration with per-stage sections. Stage seeds are
/// derived from the master seed by hashing the stage name.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub master_seed: u64,
    pub ingest: IngestConfig,
    pub synth: SynthConfig,
    pub filter: FilterConfig,
    pub song2vec: SkipgramConfig,
    pub genre: GenreStageConfig,
    pub sif: SifConfig,
    pub seq2seq: Seq2seqConfig,
    pub probe: ProbeStageConfig,
    pub ann: AnnStageConfig,
    pub rec: RecEvalConfig,
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {}", path.display(), e)))
    }
}

/// Stage seed: first eight little-endian bytes of
/// sha256(master_seed_le || stage_name).
pub fn derive_seed(master_seed: u64, stage: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(stage.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

// ----------------------------------------------------------------------
// Stages and manifest
// ----------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Synth,
    Filter,
    Stats,
    TrainSong2vec,
    Annotate,
    EmbedBow,
    EmbedSif,
    TrainSeq2seq,
    EmbedSeq2seq,
    Probe,
    BuildIndex,
    EvalRec,
}

pub const ALL_STAGES: [Stage; 13] = [
    Stage::Ingest,
    Stage::Synth,
    Stage::Filter,
    Stage::Stats,
    Stage::TrainSong2vec,
    Stage::Annotate,
    Stage::EmbedBow,
    Stage::EmbedSif,
    Stage::TrainSeq2seq,
    Stage::EmbedSeq2seq,
    Stage::Probe,
    Stage::BuildIndex,
    Stage::EvalRec,
];

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Synth => "synth",
            Stage::Filter => "filter",
            Stage::Stats => "stats",
            Stage::TrainSong2vec => "train-song2vec",
            Stage::Annotate => "annotate",
            Stage::EmbedBow => "embed-bow",
            Stage::EmbedSif => "embed-sif",
            Stage::TrainSeq2seq => "train-seq2seq",
            Stage::EmbedSeq2seq => "embed-seq2seq",
            Stage::Probe => "probe",
            Stage::BuildIndex => "build-index",
            Stage::EvalRec => "eval-rec",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        ALL_STAGES.iter().copied().find(|s| s.name() == name)
    }

    /// Dependencies as alternatives-of-stages: every group must have at
    /// least one completed member.
    fn deps(&self) -> Vec<Vec<Stage>> {
        use Stage::*;
        let source = vec![Synth, Ingest];
        match self {
            Ingest | Synth => vec![],
            Filter => vec![source],
            Stats => vec![vec![Filter]],
            TrainSong2vec => vec![vec![Filter]],
            Annotate => vec![vec![TrainSong2vec]],
            EmbedBow | EmbedSif => vec![vec![TrainSong2vec]],
            TrainSeq2seq => vec![vec![Filter]],
            EmbedSeq2seq => vec![vec![TrainSeq2seq]],
            Probe => vec![
                vec![EmbedBow],
                vec![EmbedSif],
                vec![EmbedSeq2seq],
                vec![Annotate],
            ],
            BuildIndex => vec![vec![EmbedBow], vec![EmbedSif], vec![EmbedSeq2seq]],
            EvalRec => vec![vec![BuildIndex], vec![Annotate]],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct StageRecord {
    pub completed: bool,
    pub seed: u64,
    pub inputs_hash: String,
    /// Relative artifact path -> sha256 of contents.
    pub artifacts: BTreeMap<String, String>,
    /// Free-form stage metrics (accuracies, counts).
    pub notes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub master_seed: u64,
    pub config: serde_json::Value,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    fn new(cfg: &PipelineConfig) -> Result<Self> {
        Ok(RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            master_seed: cfg.master_seed,
            config: serde_json::to_value(cfg)
                .map_err(|e| Error::config(format!("config snapshot: {}", e)))?,
            stages: BTreeMap::new(),
        })
    }

    pub fn load(run_dir: &Path) -> Result<Option<Self>> {
        let path = run_dir.join("manifest.json");
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path)?;
        Ok(Some(serde_json::from_str(&text).map_err(|e| {
            Error::format(format!("manifest.json: {}", e))
        })?))
    }

    fn save(&self, run_dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(format!("manifest: {}", e)))?;
        crate::io::write_atomic(&run_dir.join("manifest.json"), text.as_bytes())
    }

    pub fn stage_completed(&self, stage: Stage) -> bool {
        self.stages
            .get(stage.name())
            .map(|r| r.completed)
            .unwrap_or(false)
    }

    /// Hash over the manifest bytes; identical runs yield identical hashes.
    pub fn content_hash(&self) -> Result<String> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(format!("manifest: {}", e)))?;
        Ok(sha256_hex(text.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{:02x}", b)).collect()
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Exclusive lock on a run directory; one stage at a time.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(run_dir)?;
        let path = run_dir.join(".lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::data(format!(
                "run directory is locked ({} exists)",
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    SkippedUpToDate,
}

// ----------------------------------------------------------------------
// Stage execution
// ----------------------------------------------------------------------

struct StageCtx<'a> {
    run_dir: &'a Path,
    cfg: &'a PipelineConfig,
    seed: u64,
    artifacts: BTreeMap<String, String>,
    notes: BTreeMap<String, String>,
}

impl<'a> StageCtx<'a> {
    fn path(&self, rel: &str) -> PathBuf {
        self.run_dir.join(rel)
    }

    fn record(&mut self, rel: &str) -> Result<()> {
        let hash = hash_file(&self.path(rel))?;
        self.artifacts.insert(rel.to_string(), hash);
        Ok(())
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.insert(key.to_string(), value.to_string());
    }

    fn read_corpus(&self, which: &str) -> Result<Corpus> {
        let playlists = self.path(&format!("corpus/{}_playlists.tsv", which));
        let tracks = self.path(&format!("corpus/{}_tracks.csv", which));
        ingest(&playlists, &tracks)
    }

    fn write_corpus(&mut self, corpus: &Corpus, which: &str) -> Result<()> {
        std::fs::create_dir_all(self.path("corpus"))?;
        let playlists = format!("corpus/{}_playlists.tsv", which);
        let tracks = format!("corpus/{}_tracks.csv", which);
        write_corpus(corpus, &self.path(&playlists), &self.path(&tracks))?;
        self.record(&playlists)?;
        self.record(&tracks)
    }
}

/// Runs one stage (or skips it when inputs are unchanged and artifacts are
/// intact). The run directory is locked for the duration.
pub fn run_stage(run_dir: &Path, stage: Stage, cfg: &PipelineConfig) -> Result<StageOutcome> {
    let _lock = RunLock::acquire(run_dir)?;
    let mut manifest = match RunManifest::load(run_dir)? {
        Some(m) => m,
        None => RunManifest::new(cfg)?,
    };

    // Dependency check.
    for group in stage.deps() {
        if !group.iter().any(|s| manifest.stage_completed(*s)) {
            let names: Vec<&str> = group.iter().map(|s| s.name()).collect();
            return Err(Error::Dependency {
                stage: stage.name().to_string(),
                missing: names.join(" or "),
            });
        }
    }

    let inputs_hash = stage_inputs_hash(stage, cfg, &manifest)?;
    if let Some(rec) = manifest.stages.get(stage.name()) {
        if rec.completed && rec.inputs_hash == inputs_hash {
            let intact = rec.artifacts.iter().all(|(rel, expect)| {
                hash_file(&run_dir.join(rel))
                    .map(|h| &h == expect)
                    .unwrap_or(false)
            });
            if intact {
                return Ok(StageOutcome::SkippedUpToDate);
            }
        }
    }

    let seed = derive_seed(cfg.master_seed, stage.name());
    let mut ctx = StageCtx {
        run_dir,
        cfg,
        seed,
        artifacts: BTreeMap::new(),
        notes: BTreeMap::new(),
    };
    execute(stage, &mut ctx)?;

    manifest.stages.insert(
        stage.name().to_string(),
        StageRecord {
            completed: true,
            seed,
            inputs_hash,
            artifacts: ctx.artifacts,
            notes: ctx.notes,
        },
    );
    manifest.save(run_dir)?;
    Ok(StageOutcome::Ran)
}

/// Hash of everything that determines a stage's output: master seed, the
/// stage's config section, and the artifact hashes of its dependencies.
fn stage_inputs_hash(stage: Stage, cfg: &PipelineConfig, manifest: &RunManifest) -> Result<String> {
    let section = match stage {
        Stage::Ingest => serde_json::to_value(&cfg.ingest),
        Stage::Synth => serde_json::to_value(&cfg.synth),
        Stage::Filter => serde_json::to_value(&cfg.filter),
        Stage::Stats => serde_json::to_value(()),
        Stage::TrainSong2vec => serde_json::to_value(&cfg.song2vec),
        Stage::Annotate => serde_json::to_value(&cfg.genre),
        Stage::EmbedBow => serde_json::to_value(()),
        Stage::EmbedSif => serde_json::to_value(&cfg.sif),
        Stage::TrainSeq2seq => serde_json::to_value(&cfg.seq2seq),
        Stage::EmbedSeq2seq => serde_json::to_value(()),
        Stage::Probe => serde_json::to_value(&cfg.probe),
        Stage::BuildIndex => serde_json::to_value(&cfg.ann),
        Stage::EvalRec => serde_json::to_value(&cfg.rec),
    }
    .map_err(|e| Error::config(format!("config section: {}", e)))?;

    let mut hasher = Sha256::new();
    hasher.update(cfg.master_seed.to_le_bytes());
    hasher.update(stage.name().as_bytes());
    hasher.update(section.to_string().as_bytes());
    for group in stage.deps() {
        for dep in group {
            if let Some(rec) = manifest.stages.get(dep.name()) {
                if rec.completed {
                    for (rel, hash) in &rec.artifacts {
                        hasher.update(rel.as_bytes());
                        hasher.update(hash.as_bytes());
                    }
                }
            }
        }
    }
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{:02x}", b)).collect())
}

fn load_named_table(ctx: &StageCtx, rel: &str) -> Result<EmbeddingTable> {
    EmbeddingTable::read_binary(&ctx.path(rel))
}

fn read_annotations(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let (id, genre) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(path.display().to_string(), i + 1, "expected id,genre"))?;
        out.insert(id.to_string(), genre.to_string());
    }
    Ok(out)
}

fn encoder_names() -> [&'static str; 4] {
    [BASE_BOW, WEIGHTED_BOW, BASE_SEQ2SEQ, BI_SEQ2SEQ]
}

fn playlist_table_rel(encoder: &str) -> String {
    format!("embeddings/playlists_{}.bin", encoder)
}

fn execute(stage: Stage, ctx: &mut StageCtx) -> Result<()> {
    match stage {
        Stage::Ingest => {
            let pf = ctx.cfg.ingest.playlist_file.clone().ok_or_else(|| {
                Error::config("ingest.playlist_file missing from config")
            })?;
            let tf = ctx.cfg.ingest.track_file.clone().ok_or_else(|| {
                Error::config("ingest.track_file missing from config")
            })?;
            let corpus = ingest(&pf, &tf)?;
            corpus.check_integrity()?;
            ctx.note("playlists", corpus.playlists.len());
            ctx.note("tracks", corpus.tracks.len());
            ctx.write_corpus(&corpus, "raw")
        }
        Stage::Synth => {
            let mut synth_cfg = ctx.cfg.synth.clone();
            synth_cfg.seed = ctx.seed;
            let (corpus, truth) = generate_synthetic(&synth_cfg)?;
            ctx.write_corpus(&corpus, "raw")?;
            write_annotations_csv(&truth.song_genres, &ctx.path("corpus/truth_songs.csv"))?;
            write_annotations_csv(
                &truth.playlist_genres,
                &ctx.path("corpus/truth_playlists.csv"),
            )?;
            ctx.record("corpus/truth_songs.csv")?;
            ctx.record("corpus/truth_playlists.csv")?;
            ctx.note("playlists", corpus.playlists.len());
            ctx.note("tracks", corpus.tracks.len());
            Ok(())
        }
        Stage::Filter => {
            let raw = ctx.read_corpus("raw")?;
            let filtered = filter_corpus(&raw, &ctx.cfg.filter);
            ctx.note("playlists", filtered.playlists.len());
            ctx.note("tracks", filtered.tracks.len());
            ctx.write_corpus(&filtered, "filtered")
        }
        Stage::Stats => {
            let corpus = ctx.read_corpus("filtered")?;
            let stats = corpus_stats(&corpus)?;
            std::fs::create_dir_all(ctx.path("stats"))?;
            let mut summary = Vec::new();
            stats.write_summary_csv(&mut summary)?;
            crate::io::write_atomic(&ctx.path("stats/summary.csv"), &summary)?;
            let mut rank = Vec::new();
            stats.write_rank_frequency_csv(&mut rank)?;
            crate::io::write_atomic(&ctx.path("stats/rank_frequency.csv"), &rank)?;
            ctx.record("stats/summary.csv")?;
            ctx.record("stats/rank_frequency.csv")?;
            ctx.note("zipf_slope", format!("{:.4}", stats.zipf_slope()));
            Ok(())
        }
        Stage::TrainSong2vec => {
            let corpus = ctx.read_corpus("filtered")?;
            let mut s2v = ctx.cfg.song2vec.clone();
            s2v.seed = ctx.seed;
            let out = train_skipgram(&corpus, &s2v)?;
            std::fs::create_dir_all(ctx.path("embeddings"))?;
            out.table.write_binary(&ctx.path("embeddings/songs.bin"))?;
            out.table.write_text(&ctx.path("embeddings/songs.txt"))?;
            ctx.record("embeddings/songs.bin")?;
            ctx.record("embeddings/songs.txt")?;
            ctx.note("songs", out.table.len());
            for (i, loss) in out.epoch_losses.iter().enumerate() {
                ctx.note(&format!("epoch{}_loss", i), format!("{:.6}", loss));
            }
            Ok(())
        }
        Stage::Annotate => {
            let corpus = ctx.read_corpus("filtered")?;
            let songs = load_named_table(ctx, "embeddings/songs.bin")?;
            let lexicon = match &ctx.cfg.genre.lexicon_file {
                Some(path) => GenreLexicon::from_csv(path)?,
                None => GenreLexicon::builtin(),
            };
            let k = if ctx.cfg.genre.clusters == 0 {
                default_cluster_count(songs.len())
            } else {
                ctx.cfg.genre.clusters
            };
            let annotation =
                annotate_songs(&songs, &corpus, &lexicon, &ctx.cfg.genre.vote, k, ctx.seed)?;
            let playlist_labels = annotate_playlists(
                &annotation.song_genres,
                &corpus.playlists,
                ctx.cfg.genre.agree_frac,
            );
            std::fs::create_dir_all(ctx.path("genre"))?;
            write_annotations_csv(&annotation.song_genres, &ctx.path("genre/songs.csv"))?;
            write_annotations_csv(&playlist_labels, &ctx.path("genre/playlists.csv"))?;
            let rows = pca2d(&songs, &annotation.song_genres)?;
            write_pca_csv(&rows, &ctx.path("genre/pca.csv"))?;
            ctx.record("genre/songs.csv")?;
            ctx.record("genre/playlists.csv")?;
            ctx.record("genre/pca.csv")?;
            let (acc, warnings) =
                validate_annotation(&annotation.song_genres, &songs, ctx.seed)?;
            ctx.note("validation_accuracy", format!("{:.4}", acc));
            ctx.note("labeled_songs", annotation.song_genres.len());
            ctx.note("labeled_playlists", playlist_labels.len());
            ctx.note("abstained_clusters", annotation.abstained_clusters);
            for (i, w) in warnings.iter().enumerate() {
                ctx.note(&format!("warning{}", i), w);
            }
            Ok(())
        }
        Stage::EmbedBow => {
            let corpus = ctx.read_corpus("filtered")?;
            let songs = load_named_table(ctx, "embeddings/songs.bin")?;
            let encoder = BowEncoder::new(songs);
            let table = embed_playlists(&encoder, &corpus.playlists)?;
            let rel = playlist_table_rel(BASE_BOW);
            table.write_binary(&ctx.path(&rel))?;
            ctx.record(&rel)?;
            ctx.note("playlists", table.len());
            Ok(())
        }
        Stage::EmbedSif => {
            let corpus = ctx.read_corpus("filtered")?;
            let songs = load_named_table(ctx, "embeddings/songs.bin")?;
            let freq = FrequencyTable::from_corpus(&corpus)?;
            let (model, table) = fit_sif(&corpus.playlists, &songs, &freq, &ctx.cfg.sif)?;
            let rel = playlist_table_rel(WEIGHTED_BOW);
            table.write_binary(&ctx.path(&rel))?;
            ctx.record(&rel)?;
            std::fs::create_dir_all(ctx.path("models"))?;
            model.write_file(&ctx.path("models/sif.bin"))?;
            ctx.record("models/sif.bin")?;
            Ok(())
        }
        Stage::TrainSeq2seq => {
            let corpus = ctx.read_corpus("filtered")?;
            std::fs::create_dir_all(ctx.path("models"))?;
            std::fs::create_dir_all(ctx.path("logs"))?;
            for bidirectional in [false, true] {
                let mut s2s = ctx.cfg.seq2seq.clone();
                s2s.bidirectional = bidirectional;
                let tag = if bidirectional { "bi" } else { "base" };
                s2s.seed = derive_seed(ctx.seed, tag);
                let out = train_autoencoder(&corpus, &s2s)?;
                let rel = format!("models/seq2seq_{}.bin", tag);
                out.save(&ctx.path(&rel))?;
                ctx.record(&rel)?;
                let mut log = String::from("epoch,perplexity,token_accuracy\n");
                for e in &out.log {
                    log.push_str(&format!(
                        "{},{:.6},{:.6}\n",
                        e.epoch, e.perplexity, e.token_accuracy
                    ));
                }
                let log_rel = format!("logs/seq2seq_{}_train.csv", tag);
                crate::io::write_atomic(&ctx.path(&log_rel), log.as_bytes())?;
                ctx.record(&log_rel)?;
                if let Some(last) = out.log.last() {
                    ctx.note(
                        &format!("{}_final_perplexity", tag),
                        format!("{:.4}", last.perplexity),
                    );
                }
            }
            Ok(())
        }
        Stage::EmbedSeq2seq => {
            let corpus = ctx.read_corpus("filtered")?;
            for (tag, name) in [("base", BASE_SEQ2SEQ), ("bi", BI_SEQ2SEQ)] {
                let out = TrainOutput::load(&ctx.path(&format!("models/seq2seq_{}.bin", tag)))?;
                let encoder = out.encoder();
                let table = embed_playlists(&encoder, &corpus.playlists)?;
                let rel = playlist_table_rel(name);
                table.write_binary(&ctx.path(&rel))?;
                ctx.record(&rel)?;
            }
            Ok(())
        }
        Stage::Probe => run_probe_stage(ctx),
        Stage::BuildIndex => {
            std::fs::create_dir_all(ctx.path("index"))?;
            for name in encoder_names() {
                let table = load_named_table(ctx, &playlist_table_rel(name))?;
                let forest = RPForest::build(
                    table,
                    ctx.cfg.ann.n_trees,
                    ctx.cfg.ann.leaf_size,
                    derive_seed(ctx.seed, name),
                )?;
                let rel = format!("index/{}.bin", name);
                forest.save(&ctx.path(&rel))?;
                ctx.record(&rel)?;
            }
            Ok(())
        }
        Stage::EvalRec => {
            let corpus = ctx.read_corpus("filtered")?;
            let genre_labels = read_annotations(&ctx.path("genre/playlists.csv"))?;
            let mut length_labels = BTreeMap::new();
            for pl in &corpus.playlists {
                if let Some(cls) = crate::probes::plen_class(pl.len()) {
                    length_labels.insert(pl.playlist_id.clone(), format!("len{}", cls));
                }
            }
            let mut reports: Vec<RecReport> = Vec::new();
            let mut cfg = ctx.cfg.rec.clone();
            cfg.seed = ctx.seed;
            for name in encoder_names() {
                let forest = RPForest::load(&ctx.path(&format!("index/{}.bin", name)))?;
                let search_k = if ctx.cfg.ann.search_k == 0 {
                    forest.default_search_k(cfg.k_grid.iter().copied().max().unwrap_or(10))
                } else {
                    ctx.cfg.ann.search_k
                };
                let index = RecIndex::Forest {
                    forest: &forest,
                    search_k,
                };
                for (labels, kind) in [
                    (&genre_labels, LabelKind::Genre),
                    (&length_labels, LabelKind::Length),
                ] {
                    reports.push(eval_recommendation(&index, labels, kind, name, &cfg)?);
                }
            }
            std::fs::create_dir_all(ctx.path("rec"))?;
            crate::recsys::write_rec_csv(&reports, &ctx.path("rec/pr.csv"))?;
            ctx.record("rec/pr.csv")?;
            Ok(())
        }
    }
}

fn run_probe_stage(ctx: &mut StageCtx) -> Result<()> {
    let corpus = ctx.read_corpus("filtered")?;
    let song_labels = read_annotations(&ctx.path("genre/songs.csv"))?;
    let playlist_labels = read_annotations(&ctx.path("genre/playlists.csv"))?;
    let occurrence = corpus.track_occurrence_counts();

    let tables: BTreeMap<&str, EmbeddingTable> = encoder_names()
        .iter()
        .map(|&name| Ok((name, load_named_table(ctx, &playlist_table_rel(name))?)))
        .collect::<Result<_>>()?;

    // Live encoders for the order probes (they embed permuted variants).
    let songs = load_named_table(ctx, "embeddings/songs.bin")?;
    let freq = FrequencyTable::from_corpus(&corpus)?;
    let bow = BowEncoder::new(songs.clone());
    let (sif_model, _) = fit_sif(&corpus.playlists, &songs, &freq, &ctx.cfg.sif)?;
    let uni = TrainOutput::load(&ctx.path("models/seq2seq_base.bin"))?.encoder();
    let bi = TrainOutput::load(&ctx.path("models/seq2seq_bi.bin"))?.encoder();
    let live: Vec<(&str, &dyn PlaylistEncoder)> = vec![
        (BASE_BOW, &bow),
        (WEIGHTED_BOW, &sif_model),
        (BASE_SEQ2SEQ, &uni),
        (BI_SEQ2SEQ, &bi),
    ];

    let pcfg = &ctx.cfg.probe;
    let mut train_cfg = pcfg.train.clone();
    train_cfg.seed = ctx.seed;
    let mut reports: Vec<ProbeReport> = Vec::new();

    for (name, table) in &tables {
        let split_seed = derive_seed(ctx.seed, &format!("{}-static", name));
        let mut run = |ds: Result<crate::probes::ProbeDataset>| -> Result<()> {
            match ds {
                Ok(ds) => {
                    reports.push(train_probe(&ds, name, &train_cfg)?);
                    Ok(())
                }
                Err(Error::Data(msg)) => {
                    ctx.notes
                        .insert(format!("skip_{}_{}", name, reports.len()), msg);
                    Ok(())
                }
                Err(e) => Err(e),
            }
        };
        run(make_gpred(&playlist_labels, table, split_seed))?;
        run(make_gdpred(&corpus.playlists, &song_labels, table, split_seed))?;
        run(make_plen(&corpus.playlists, table, split_seed))?;
        run(make_sc(
            &corpus.playlists,
            &occurrence,
            table,
            pcfg.sc_targets,
            split_seed,
        )
        .map(|(ds, warnings)| {
            for (i, w) in warnings.iter().enumerate() {
                ctx.notes.insert(format!("sc_warning_{}_{}", name, i), w.clone());
            }
            ds
        }))?;
        run(make_gmlpred(&corpus.playlists, &song_labels, table, split_seed))?;
        run(make_gspred(&corpus.playlists, &song_labels, table, split_seed))?;
    }

    // Order probes need live encoders.
    for (name, encoder) in &live {
        let seed = derive_seed(ctx.seed, &format!("{}-order", name));
        let ds = make_bshift(&corpus.playlists, *encoder, pcfg.order_limit, seed)?;
        reports.push(train_probe(&ds, name, &train_cfg)?);
    }
    for (name, encoder) in &live {
        if !pcfg.permute_encoders.iter().any(|e| e == name) {
            continue;
        }
        for kind in &pcfg.permute_kinds {
            for &fraction in &pcfg.permute_fractions {
                let variants: &[bool] = if pcfg.exclude_complement_variants {
                    &[false, true]
                } else {
                    &[false]
                };
                for &excl in variants {
                    let seed = derive_seed(
                        ctx.seed,
                        &format!("{}-{}-{}-{}", name, kind.tag(), fraction, excl),
                    );
                    let ds = make_permute(
                        &corpus.playlists,
                        *encoder,
                        *kind,
                        fraction,
                        excl,
                        pcfg.order_limit,
                        seed,
                    )?;
                    reports.push(train_probe(&ds, name, &train_cfg)?);
                }
            }
        }
    }

    std::fs::create_dir_all(ctx.path("probes"))?;
    crate::probes::write_reports_csv(&reports, &ctx.path("probes/reports.csv"))?;
    ctx.record("probes/reports.csv")?;
    let detail = serde_json::to_string_pretty(&reports)
        .map_err(|e| Error::format(format!("probe reports: {}", e)))?;
    crate::io::write_atomic(&ctx.path("probes/reports.json"), detail.as_bytes())?;
    ctx.record("probes/reports.json")?;
    ctx.note("n_reports", reports.len());
    Ok(())
}

// ----------------------------------------------------------------------
// Report aggregation
// ----------------------------------------------------------------------

/// One row of a parsed probe report CSV.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub task: String,
    pub encoder: String,
    pub dim: usize,
    pub accuracy: f64,
}

pub fn read_reports_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::parse(path.display().to_string(), i + 1, "bad row"));
        }
        rows.push(ReportRow {
            task: parts[0].to_string(),
            encoder: parts[1].to_string(),
            dim: parts[2].parse().unwrap_or(0),
            accuracy: parts[3].parse().unwrap_or(f64::NAN),
        });
    }
    Ok(rows)
}

/// Aggregates probe and recommendation outputs from one or more run
/// directories into a task-by-encoder grid, a permute curve, and copies of
/// the PR data. Missing pieces are marked absent rather than failing.
pub fn write_report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut pr_lines: Vec<String> = Vec::new();
    for dir in run_dirs {
        let probe_csv = dir.join("probes/reports.csv");
        if probe_csv.exists() {
            rows.extend(read_reports_csv(&probe_csv)?);
        }
        let pr = dir.join("rec/pr.csv");
        if pr.exists() {
            let text = std::fs::read_to_string(&pr)?;
            for (i, line) in text.lines().enumerate() {
                if i == 0 && !pr_lines.is_empty() {
                    continue;
                }
                pr_lines.push(line.to_string());
            }
        }
    }

    // Task-by-encoder grid, one column set per dim.
    let static_tasks = ["gpred", "gdpred", "plen", "sc", "gmlpred", "gspred", "bshift"];
    let mut encoders: Vec<String> = rows.iter().map(|r| r.encoder.clone()).collect();
    encoders.sort();
    encoders.dedup();
    let mut dims: Vec<usize> = rows.iter().map(|r| r.dim).collect();
    dims.sort_unstable();
    dims.dedup();

    let mut grid = String::from("encoder,dim");
    for t in static_tasks {
        grid.push(',');
        grid.push_str(t);
    }
    grid.push('\n');
    for encoder in &encoders {
        for &dim in &dims {
            let cells: Vec<String> = static_tasks
                .iter()
                .map(|t| {
                    rows.iter()
                        .find(|r| &r.encoder == encoder && r.dim == dim && &r.task == t)
                        .map(|r| format!("{:.4}", r.accuracy))
                        .unwrap_or_else(|| "absent".to_string())
                })
                .collect();
            if cells.iter().all(|c| c == "absent") {
                continue;
            }
            grid.push_str(&format!("{},{},{}\n", encoder, dim, cells.join(",")));
        }
    }
    crate::io::write_atomic(&out_dir.join("table.csv"), grid.as_bytes())?;

    // Permute curve rows: task name permute-<kind>-<fraction>[-excl].
    let mut curve = String::from("encoder,kind,fraction,exclude_complement,accuracy\n");
    for r in &rows {
        if let Some(rest) = r.task.strip_prefix("permute-") {
            let excl = rest.ends_with("-excl");
            let rest = rest.strip_suffix("-excl").unwrap_or(rest);
            if let Some((kind, fraction)) = rest.split_once('-') {
                curve.push_str(&format!(
                    "{},{},{},{},{:.4}\n",
                    r.encoder, kind, fraction, excl, r.accuracy
                ));
            }
        }
    }
    crate::io::write_atomic(&out_dir.join("permute_curve.csv"), curve.as_bytes())?;

    if !pr_lines.is_empty() {
        crate::io::write_atomic(&out_dir.join("pr.csv"), pr_lines.join("\n").as_bytes())?;
    }

    // Markdown summary.
    let mut md = String::from("# Run report\n\n## Probing accuracies\n\n");
    md.push_str("| encoder | dim |");
    for t in static_tasks {
        md.push_str(&format!(" {} |", t));
    }
    md.push('\n');
    md.push_str("|---|---|");
    for _ in static_tasks {
        md.push_str("---|");
    }
    md.push('\n');
    for encoder in &encoders {
        for &dim in &dims {
            let cells: Vec<String> = static_tasks
                .iter()
                .map(|t| {
                    rows.iter()
                        .find(|r| &r.encoder == encoder && r.dim == dim && &r.task == t)
                        .map(|r| format!("{:.3}", r.accuracy))
                        .unwrap_or_else(|| "-".to_string())
                })
                .collect();
            if cells.iter().all(|c| c == "-") {
                continue;
            }
            md.push_str(&format!("| {} | {} | {} |\n", encoder, dim, cells.join(" | ")));
        }
    }
    md.push_str("\nPermute curves: permute_curve.csv; PR data: pr.csv\n");
    crate::io::write_atomic(&out_dir.join("summary.md"), md.as_bytes())?;
    Ok(())
}
