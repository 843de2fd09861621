use std::collections::HashSet;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fragsearch::corpus::{
    assemble_fragments, read_fragments_jsonl, read_pages_jsonl, select_pages, write_fragments_jsonl,
    AssembleOptions, CategoryGraph, CorpusStats,
};
use fragsearch::embfile::{open_embeddings, write_embeddings, EmbeddingRecord};
use fragsearch::eval::{run_benchmark, BenchConfig, BenchQuery, Qrels};
use fragsearch::fixtures::{fixture_fragments, PlantedNeedle};
use fragsearch::querying::{compose_text_query, filter_query_embeddings, full_multimodal_query};
use fragsearch::store::{DEFAULT_MAX_VECTORS, MANIFEST_FILE};
use fragsearch::{
    search_one_stage, search_two_stage, BuildConfig, Error, Index, QueryEmbedding, SearchParams, SearchResult,
    SegmentedSequence,
};
use serde_json::json;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "fragsearch", version, about = "Multi-vector retrieval over multimodal fragments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an index from fragments and their embeddings.
    Build(BuildArgs),
    /// Search an index with embedded queries.
    Search(SearchArgs),
    /// Benchmark store/query configurations against relevance judgments.
    Eval(EvalArgs),
    /// Assemble fragments or select pages by category.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Write a seeded synthetic corpus, queries and judgments.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// Fragments, one JSON object per line.
    #[arg(long)]
    input: PathBuf,
    /// Embedding file with one record per fragment id.
    #[arg(long)]
    embeddings: PathBuf,
    /// Output index directory.
    #[arg(long)]
    out: PathBuf,
    /// Content clusters per document.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    k: u32,
    /// Embedding dimension.
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u32).range(1..))]
    dim: u32,
    /// Per-document row cap; content rows past it are dropped.
    #[arg(long, default_value_t = DEFAULT_MAX_VECTORS as u32, value_parser = clap::value_parser!(u32).range(1..))]
    max_vectors: u32,
}

#[derive(Args, Clone, Copy)]
struct ParamArgs {
    /// Prefetch size before oversampling.
    #[arg(long, default_value_t = 100)]
    n1: usize,
    /// Results returned per query.
    #[arg(long, default_value_t = 5)]
    n2: usize,
    /// Stage-one candidates are n1 * oversample.
    #[arg(long, default_value_t = 2)]
    oversample: usize,
}

impl From<ParamArgs> for SearchParams {
    fn from(a: ParamArgs) -> Self {
        SearchParams {
            n1: a.n1,
            n2: a.n2,
            oversample: a.oversample,
        }
    }
}

#[derive(Args)]
struct SearchArgs {
    /// Index directory.
    #[arg(long, env = "FRAGSEARCH_INDEX")]
    index: PathBuf,
    /// Embedding file holding one or more queries.
    #[arg(long)]
    query_emb: PathBuf,
    #[command(flatten)]
    params: ParamArgs,
    /// Rescore every document instead of prefetching.
    #[arg(long)]
    one_stage: bool,
    /// Keep image rows of multimodal queries instead of only the text rows.
    #[arg(long)]
    full_query: bool,
    /// Print results as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Index directory.
    #[arg(long, env = "FRAGSEARCH_INDEX")]
    index: PathBuf,
    /// Embedding file of benchmark queries.
    #[arg(long)]
    queries: PathBuf,
    /// TSV of `query_id<TAB>fragment_id`.
    #[arg(long)]
    qrels: PathBuf,
    /// `all`, or comma-separated `store/query` pairs.
    #[arg(long, default_value = "all")]
    configs: String,
    #[command(flatten)]
    params: ParamArgs,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Turn parsed pages into paragraph fragments.
    Assemble {
        /// Parsed pages, one JSON object per line.
        #[arg(long)]
        pages: PathBuf,
        /// Output fragments file.
        #[arg(long)]
        out: PathBuf,
        /// Keep at most this many images per fragment, nearest first.
        #[arg(long)]
        max_images: Option<usize>,
    },
    /// List pages under the given root categories.
    Select {
        /// Category graph JSON.
        #[arg(long)]
        graph: PathBuf,
        /// Root category; repeatable.
        #[arg(long, required = true)]
        roots: Vec<String>,
        /// Subcategory levels to descend.
        #[arg(long, default_value_t = 5)]
        depth: usize,
        /// Write titles here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct FixtureArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    docs: u64,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    queries: u64,
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u32).range(1..))]
    dim: u32,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

enum Failure {
    Data(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Internal(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let res = match cli.command {
        Command::Build(a) => build(a),
        Command::Search(a) => search(a),
        Command::Eval(a) => eval(a),
        Command::Corpus(c) => corpus(c),
        Command::Fixture(a) => fixture(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}

fn build(a: BuildArgs) -> CliResult {
    check_out_dir(&a.out)?;
    let mut fragment_ids = HashSet::new();
    for f in read_fragments_jsonl(&a.input)? {
        fragment_ids.insert(f?.fragment_id);
    }
    let reader = open_embeddings(&a.embeddings)?;
    if reader.dim() != a.dim as usize {
        return Err(Failure::Data(format!(
            "embeddings have dim {}, expected {}",
            reader.dim(),
            a.dim
        )));
    }
    let mut seen = HashSet::new();
    let docs = reader.map(|r| {
        let r = r?;
        if !fragment_ids.contains(&r.id) {
            return Err(Error::InvalidFragment(format!(
                "embedding id {:?} has no matching fragment",
                r.id
            )));
        }
        seen.insert(r.id.clone());
        Ok((r.id, r.sequence))
    });
    let cfg = BuildConfig {
        dim: a.dim as usize,
        k: a.k as usize,
        max_vectors: a.max_vectors as usize,
        normalize: true,
    };
    let dir = tempdir_beside(&a.out);
    let index = Index::build(docs, cfg)?;
    if let Some(missing) = fragment_ids.iter().find(|id| !seen.contains(*id)) {
        return Err(Failure::Data(format!("fragment {missing:?} has no embedding")));
    }
    index.write(&dir)?;
    replace_dir(&dir, &a.out)?;
    let m = index.manifest();
    println!(
        "{} docs, tier1 {} bytes, tier2 {} bytes -> {}",
        m.doc_count,
        index.tier1_bytes().len(),
        index.tier2_bytes().len(),
        a.out.display()
    );
    Ok(())
}

/// Staging directory next to `out`, so a failed build leaves no partial index.
fn tempdir_beside(out: &Path) -> PathBuf {
    let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!(".{name}.partial-{}", std::process::id()))
}

/// Refuses to overwrite a non-empty directory that is not an index.
fn check_out_dir(out: &Path) -> CliResult {
    if let Ok(mut entries) = fs::read_dir(out) {
        if entries.next().is_some() && !out.join(MANIFEST_FILE).exists() {
            return Err(Failure::Data(format!(
                "{} exists and is not an index directory",
                out.display()
            )));
        }
    }
    Ok(())
}

fn replace_dir(staged: &Path, out: &Path) -> CliResult {
    if out.exists() {
        fs::remove_dir_all(out)?;
    }
    fs::rename(staged, out)?;
    Ok(())
}

fn read_queries(path: &Path) -> CliResult<Vec<EmbeddingRecord>> {
    let mut out = Vec::new();
    for r in open_embeddings(path)? {
        let r = r?;
        let sequence = r.sequence.normalize()?;
        out.push(EmbeddingRecord { id: r.id, sequence });
    }
    if out.is_empty() {
        return Err(Failure::Data(format!("{}: no queries", path.display())));
    }
    Ok(out)
}

/// Text rows only when the query carries image rows, unless `full` is set.
fn to_query(seq: &SegmentedSequence, full: bool) -> fragsearch::Result<QueryEmbedding> {
    let text_only = seq.labels().iter().all(|l| l.is_query());
    if text_only {
        compose_text_query(seq)
    } else if full {
        full_multimodal_query(seq)
    } else {
        filter_query_embeddings(seq)
    }
}

fn search(a: SearchArgs) -> CliResult {
    let index = Index::open(&a.index)?;
    let params = SearchParams::from(a.params);
    if !a.one_stage {
        params.validate()?;
    }
    let mut results: Vec<(String, SearchResult)> = Vec::new();
    for q in read_queries(&a.query_emb)? {
        let query = to_query(&q.sequence, a.full_query)?;
        let res = if a.one_stage {
            search_one_stage(&index, &query, params.n2)?
        } else {
            search_two_stage(&index, &query, &params)?
        };
        results.push((q.id, res));
    }
    let mut out = io::stdout().lock();
    if a.json {
        let v: Vec<_> = results
            .iter()
            .map(|(id, r)| json!({"query_id": id, "hits": r.hits, "timings": r.timings}))
            .collect();
        writeln!(out, "{}", serde_json::to_string_pretty(&v).map_err(|e| Failure::Internal(e.to_string()))?)?;
    } else {
        for (id, r) in &results {
            writeln!(out, "query {id}")?;
            for (rank, h) in r.hits.iter().enumerate() {
                writeln!(out, "{:>4}  {:<40}  {:.6}", rank + 1, h.fragment_id, h.score)?;
            }
            writeln!(
                out,
                "      stage1 {} us, stage2 {} us, total {} us",
                r.timings.stage1_us, r.timings.stage2_us, r.timings.total_us
            )?;
        }
    }
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    let qrels = Qrels::from_path(&a.qrels)?;
    let index = Index::open(&a.index)?;
    let configs = BenchConfig::parse_list(&a.configs, a.params.into())?;
    let queries: Vec<BenchQuery> = read_queries(&a.queries)?
        .into_iter()
        .map(|r| BenchQuery {
            id: r.id,
            embedded: r.sequence,
        })
        .collect();
    let report = run_benchmark(&index, &queries, &qrels, &configs)?;
    print!("{}", report.render_table());
    if let Some(path) = &a.report {
        fs::write(path, report.to_json()).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn corpus(c: CorpusCommand) -> CliResult {
    match c {
        CorpusCommand::Assemble { pages, out, max_images } => {
            let pages = read_pages_jsonl(&pages)?;
            let opts = AssembleOptions { max_images };
            let mut frags = Vec::new();
            for p in &pages {
                frags.extend(assemble_fragments(p, opts)?);
            }
            write_fragments_jsonl(&frags, &out)?;
            println!("{}", CorpusStats::of(&frags));
        }
        CorpusCommand::Select {
            graph,
            roots,
            depth,
            out,
        } => {
            let text = fs::read_to_string(&graph).map_err(|e| Failure::Data(format!("{}: {e}", graph.display())))?;
            let g = CategoryGraph::from_json(&text)?;
            let selected = select_pages(&g, &roots, depth)?;
            let listing: String = selected.iter().map(|p| format!("{p}\n")).collect();
            match out {
                Some(path) => fs::write(&path, listing).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?,
                None => io::stdout().lock().write_all(listing.as_bytes())?,
            }
            eprintln!("{} pages selected", selected.len());
        }
    }
    Ok(())
}

fn fixture(a: FixtureArgs) -> CliResult {
    if a.queries > a.docs {
        return Err(Failure::Data("--queries must not exceed --docs".into()));
    }
    fs::create_dir_all(&a.out).map_err(|e| Failure::Data(format!("{}: {e}", a.out.display())))?;
    let spec = PlantedNeedle {
        docs: a.docs as usize,
        queries: a.queries as usize,
        dim: a.dim as usize,
        seed: a.seed,
        ..PlantedNeedle::default()
    };
    let corpus = spec.generate();
    write_fragments_jsonl(&fixture_fragments(spec.docs), &a.out.join("fragments.jsonl"))?;
    let docs: Vec<EmbeddingRecord> = corpus
        .docs
        .into_iter()
        .map(|(id, s)| EmbeddingRecord::new(id, s))
        .collect();
    write_embeddings(&a.out.join("embeddings.bin"), spec.dim, &docs)?;
    let queries: Vec<EmbeddingRecord> = corpus
        .queries
        .into_iter()
        .map(|q| EmbeddingRecord::new(q.id, q.embedded))
        .collect();
    write_embeddings(&a.out.join("queries.bin"), spec.dim, &queries)?;
    fs::write(a.out.join("qrels.tsv"), corpus.qrels.to_tsv())?;
    println!(
        "{} docs, {} queries (dim {}, seed {}) -> {}",
        spec.docs,
        spec.queries,
        spec.dim,
        spec.seed,
        a.out.display()
    );
    Ok(())
}
