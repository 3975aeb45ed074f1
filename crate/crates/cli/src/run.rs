//! `run`: execute one prompting method over a dataset with a worker pool,
//! one JSON artifact per instance, resumable.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use demoforge_core::backend::{Backend, HttpBackend, HttpConfig, ReplayBackend, ScriptedBackend};
use demoforge_core::pipelines::{
    Instance, Method, PipelineRun, Runner, SelfDemosConfig, SelfIclConfig,
};
use demoforge_core::prompts::TemplateRegistry;
use demoforge_core::retrieval::Corpus;

use crate::config::{Config, Variant};
use crate::data::load_dataset;

pub struct RunArgs {
    pub method: Method,
    pub dataset: PathBuf,
    pub tools: Option<PathBuf>,
    pub backend: String,
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub kv_reuse: bool,
    pub paths: Option<u32>,
    pub n_generate: Option<u32>,
    pub k_select: Option<u32>,
    pub variant: Option<Variant>,
    pub corpus: Option<PathBuf>,
    pub force: bool,
    pub fail_fast: bool,
}

/// Everything a worker needs to run one instance.
struct ResolvedMethod {
    method: Method,
    self_demos: SelfDemosConfig,
    self_icl: SelfIclConfig,
    analogical_few_shot: bool,
    paths: u32,
    retrieval_k: usize,
    corpus: Option<Corpus>,
}

impl ResolvedMethod {
    fn run_one(
        &self,
        runner: &Runner<'_>,
        instance: &Instance,
        backend: &dyn Backend,
    ) -> Result<PipelineRun, demoforge_core::pipelines::PipelineError> {
        match self.method {
            Method::SelfDemos => runner.run_self_demos(instance, &self.self_demos, backend),
            Method::ZeroShot => runner.run_zero_shot(instance, backend, false),
            Method::ZeroShotCot => runner.run_zero_shot(instance, backend, true),
            Method::FewShot => runner.run_few_shot(instance, backend),
            Method::SelfIcl => runner.run_self_icl(instance, &self.self_icl, backend),
            Method::Analogical => {
                runner.run_analogical(instance, backend, self.analogical_few_shot)
            }
            Method::SelfConsistency => {
                runner.run_self_consistency(instance, backend, self.paths)
            }
            Method::RetrievalBm25 => runner.run_retrieval_bm25(
                instance,
                self.corpus.as_ref().expect("corpus checked at resolve time"),
                self.retrieval_k,
                backend,
            ),
        }
    }
}

/// Parses a backend spec: `live`, `mock:<script>`, `replay:<dir>`, or
/// `record:<dir>` (live with write-through caching).
pub fn build_backend(spec: &str, config: &Config) -> anyhow::Result<Box<dyn Backend>> {
    let http_config = || {
        let b = &config.backend;
        let mut cfg = HttpConfig::new(b.base_url.clone(), b.model.clone());
        cfg.timeout_secs = b.timeout_secs;
        cfg.max_retries = b.max_retries;
        cfg.chars_per_token = b.chars_per_token;
        cfg
    };
    if spec == "live" {
        return Ok(Box::new(HttpBackend::new(http_config())?));
    }
    if let Some(script) = spec.strip_prefix("mock:") {
        return Ok(Box::new(ScriptedBackend::from_json_file(Path::new(script))?));
    }
    if let Some(dir) = spec.strip_prefix("replay:") {
        return Ok(Box::new(ReplayBackend::replay(dir, config.backend.model.clone())));
    }
    if let Some(dir) = spec.strip_prefix("record:") {
        let live = Box::new(HttpBackend::new(http_config())?);
        return Ok(Box::new(ReplayBackend::recording(
            dir,
            config.backend.model.clone(),
            live,
        )));
    }
    bail!("unknown backend {spec:?}; expected live, mock:<script>, replay:<dir>, or record:<dir>");
}

fn sanitize_for_filename(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

pub fn artifact_path(out_dir: &Path, instance_id: &str) -> PathBuf {
    out_dir.join(format!("{}.json", sanitize_for_filename(instance_id)))
}

fn load_registry(config: &Config) -> anyhow::Result<TemplateRegistry> {
    match &config.run.templates_dir {
        Some(dir) => Ok(TemplateRegistry::from_dir(Path::new(dir))?),
        None => Ok(TemplateRegistry::builtin()),
    }
}

pub fn cmd_run(args: RunArgs, config: &Config) -> anyhow::Result<u8> {
    let tools_from_config = config.run.tools.as_ref().map(PathBuf::from);
    let tools_path = args.tools.clone().or(tools_from_config);
    let dataset = load_dataset(&args.dataset, tools_path.as_deref())?;
    let instances = dataset.instances();
    let backend = build_backend(&args.backend, config)?;
    let registry = load_registry(config)?;
    let runner = Runner { registry: &registry, max_tokens: config.backend.max_tokens };

    let corpus = match (&args.method, &args.corpus, &config.run.corpus) {
        (Method::RetrievalBm25, Some(path), _) => Some(Corpus::load_jsonl(path)?),
        (Method::RetrievalBm25, None, Some(path)) => Some(Corpus::load_jsonl(Path::new(path))?),
        (Method::RetrievalBm25, None, None) => {
            bail!("retrieval-bm25 needs --corpus <jsonl> (or run.corpus in the config)")
        }
        _ => None,
    };

    let variant_few_shot = |flag: Option<Variant>, section: Variant| {
        flag.unwrap_or(section) == Variant::FewShot
    };
    let self_icl_few_shot = variant_few_shot(args.variant, config.self_icl.variant);
    let resolved = ResolvedMethod {
        method: args.method,
        self_demos: SelfDemosConfig {
            n_generate: args.n_generate.unwrap_or(config.self_demos.n_generate),
            k_select: args.k_select.unwrap_or(config.self_demos.k_select),
            temperature_sample: config.self_demos.temperature_sample,
            temperature_greedy: 0.0,
            kv_reuse: args.kv_reuse || config.self_demos.kv_reuse,
        },
        self_icl: SelfIclConfig {
            n_demos: config
                .self_icl
                .n_demos
                .unwrap_or(if self_icl_few_shot { 2 } else { 3 }),
            few_shot: self_icl_few_shot,
        },
        analogical_few_shot: variant_few_shot(args.variant, config.analogical.variant),
        paths: args.paths.unwrap_or(config.run.paths),
        retrieval_k: config.run.retrieval_k,
        corpus,
    };

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;

    let workers = args.workers.unwrap_or(config.run.workers).max(1);
    let next = AtomicUsize::new(0);
    let failures = AtomicUsize::new(0);
    let skipped = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let total = instances.len();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= total {
                    break;
                }
                let instance = &instances[idx];
                let path = artifact_path(&args.out, instance.id());
                if path.exists() && !args.force {
                    skipped.fetch_add(1, Ordering::SeqCst);
                    eprintln!("[{}/{}] {} skipped (artifact exists)", idx + 1, total, instance.id());
                    continue;
                }
                match resolved.run_one(&runner, instance, &backend) {
                    Ok(mut run) => {
                        run.meta.timestamp_unix = SystemTime::now()
                            .duration_since(UNIX_EPOCH)
                            .ok()
                            .map(|d| d.as_secs());
                        let serialized =
                            serde_json::to_string_pretty(&run).expect("runs serialize");
                        if let Err(e) = std::fs::write(&path, serialized) {
                            eprintln!("[{}/{}] {} write failed: {e}", idx + 1, total, instance.id());
                            failures.fetch_add(1, Ordering::SeqCst);
                            if args.fail_fast {
                                stop.store(true, Ordering::SeqCst);
                            }
                            continue;
                        }
                        eprintln!("[{}/{}] {} ok", idx + 1, total, instance.id());
                    }
                    Err(e) => {
                        failures.fetch_add(1, Ordering::SeqCst);
                        eprintln!("[{}/{}] {} FAILED: {e}", idx + 1, total, instance.id());
                        let error_path =
                            args.out.join(format!("{}.error.json", sanitize_for_filename(instance.id())));
                        let record = serde_json::json!({
                            "instance_id": instance.id(),
                            "method": args.method.as_str(),
                            "error": e.to_string(),
                        });
                        let _ = std::fs::write(&error_path, record.to_string());
                        if args.fail_fast {
                            stop.store(true, Ordering::SeqCst);
                        }
                    }
                }
            });
        }
    });

    let failed = failures.load(Ordering::SeqCst);
    eprintln!(
        "done: {} ok, {} failed, {} skipped",
        total - failed - skipped.load(Ordering::SeqCst),
        failed,
        skipped.load(Ordering::SeqCst)
    );
    Ok(if failed > 0 { 1 } else { 0 })
}

/// Reads every run artifact in a directory (`*.json`, excluding error
/// records), sorted by file name.
pub fn load_artifacts(dir: &Path) -> anyhow::Result<Vec<PipelineRun>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read run dir {}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "json")
                && !p
                    .file_name()
                    .is_some_and(|n| n.to_string_lossy().ends_with(".error.json"))
                && !p
                    .file_name()
                    .is_some_and(|n| {
                        let name = n.to_string_lossy();
                        name == "summary.json" || name == "scores.jsonl"
                    })
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|path| {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("bad run artifact {}", path.display()))
        })
        .collect()
}
