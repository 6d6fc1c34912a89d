//! Declarative run configuration: a TOML file naming endpoints, role
//! bindings, and knobs, plus flag overrides that win over file values.
//! All validation happens at load time, before any model call.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cli::CliError;
use crate::gateway::{EndpointKind, Gateway, MockScript, ModelEndpoint};
use crate::harness::JudgeTemplates;
use crate::hashing::sha256_hex;
use crate::pipeline::{PipelineConfig, PromptTemplates, ScoreClamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(format!("unknown format {other:?}, expected json or csv")),
        }
    }
}

/// Flag-level overrides; every set field wins over the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub pi: Option<f64>,
    pub epsilon: Option<f64>,
    pub concurrency: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub format: Option<OutputFormat>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct ConfigFile {
    #[serde(default)]
    endpoints: Vec<EndpointEntry>,
    pipeline: Option<PipelineSection>,
    #[serde(default)]
    harness: HarnessSection,
    cache_dir: Option<PathBuf>,
    concurrency: Option<usize>,
    output: Option<PathBuf>,
    format: Option<OutputFormat>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct EndpointEntry {
    #[serde(flatten)]
    endpoint: ModelEndpoint,
    /// JSON file holding the MockScript for kind = "mock" endpoints.
    script_file: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct PipelineSection {
    pi: Option<f64>,
    epsilon: Option<f64>,
    clamp: Option<ScoreClamp>,
    decomposer: String,
    fact_checker: String,
    corrector: String,
    summary_arity: Option<usize>,
    top_k_probs: Option<u32>,
    #[serde(default)]
    templates: TemplateSection,
}

#[derive(Debug, Default, Deserialize)]
struct TemplateSection {
    decompose_file: Option<PathBuf>,
    correct_file: Option<PathBuf>,
    summarize_file: Option<PathBuf>,
    tf_prefix: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct HarnessSection {
    judge: Option<String>,
    answerer: Option<String>,
    checker: Option<String>,
    generator: Option<String>,
    judge_decompose_file: Option<PathBuf>,
    judge_verdicts_file: Option<PathBuf>,
    coverage_answer_file: Option<PathBuf>,
}

/// Endpoint ids bound to harness roles.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RoleBindings {
    pub judge: Option<String>,
    pub answerer: Option<String>,
    pub checker: Option<String>,
    pub generator: Option<String>,
}

/// A fully resolved, validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub endpoints: Vec<ModelEndpoint>,
    pub mock_scripts: Vec<(String, MockScript)>,
    pub pipeline: Option<PipelineConfig>,
    pub judge_templates: JudgeTemplates,
    pub roles: RoleBindings,
    pub cache_dir: PathBuf,
    pub concurrency: usize,
    pub output: PathBuf,
    pub format: OutputFormat,
    pub seed: u64,
    pub config_digest: String,
}

impl RunConfig {
    /// Parse, resolve, and validate a config file. Errors here are
    /// configuration errors: nothing has touched the network or cache.
    pub fn load(path: impl AsRef<Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let file: ConfigFile = toml::from_str(&raw)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
        Self::resolve(file, base_dir, overrides)
    }

    fn resolve(file: ConfigFile, base_dir: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let mut endpoints = Vec::with_capacity(file.endpoints.len());
        let mut mock_scripts = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for entry in file.endpoints {
            let endpoint = entry.endpoint;
            endpoint
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
            if !seen.insert(endpoint.id.clone()) {
                return Err(CliError::Config(format!(
                    "duplicate endpoint id {:?}",
                    endpoint.id
                )));
            }
            match endpoint.kind {
                EndpointKind::Mock => {
                    let script_file = entry.script_file.ok_or_else(|| {
                        CliError::Config(format!(
                            "mock endpoint {:?} needs a script_file",
                            endpoint.id
                        ))
                    })?;
                    let script_path = base_dir.join(script_file);
                    let body = std::fs::read_to_string(&script_path)
                        .map_err(|e| CliError::Config(format!("{}: {e}", script_path.display())))?;
                    let script: MockScript = serde_json::from_str(&body)
                        .map_err(|e| CliError::Config(format!("{}: {e}", script_path.display())))?;
                    mock_scripts.push((endpoint.id.clone(), script));
                }
                EndpointKind::Text | EndpointKind::Vision => {
                    // Fail fast on missing key material, before any traffic.
                    if !endpoint.api_key_ref.is_empty()
                        && std::env::var(&endpoint.api_key_ref).is_err()
                    {
                        return Err(CliError::Config(format!(
                            "endpoint {:?}: api key variable {:?} is not set",
                            endpoint.id, endpoint.api_key_ref
                        )));
                    }
                }
            }
            endpoints.push(endpoint);
        }

        let find = |id: &str| -> Result<ModelEndpoint, CliError> {
            endpoints
                .iter()
                .find(|e| e.id == id)
                .cloned()
                .ok_or_else(|| CliError::Config(format!("endpoint id {id:?} does not resolve")))
        };

        let pipeline = match file.pipeline {
            None => None,
            Some(section) => {
                let mut config = PipelineConfig::new(
                    find(&section.decomposer)?,
                    find(&section.fact_checker)?,
                    find(&section.corrector)?,
                );
                if let Some(pi) = section.pi {
                    config.pi = pi;
                }
                if let Some(epsilon) = section.epsilon {
                    config.epsilon = epsilon;
                }
                if let Some(clamp) = section.clamp {
                    config.clamp = clamp;
                }
                if let Some(arity) = section.summary_arity {
                    config.summary_arity = arity;
                }
                if let Some(top_k) = section.top_k_probs {
                    config.top_k_probs = top_k;
                }
                config.templates = load_prompt_templates(&section.templates, base_dir)?;
                Some(config)
            }
        };

        let mut judge_templates = JudgeTemplates::default();
        if let Some(file) = &file.harness.judge_decompose_file {
            judge_templates.decompose = read_template(base_dir, file)?;
        }
        if let Some(file) = &file.harness.judge_verdicts_file {
            judge_templates.verdicts = read_template(base_dir, file)?;
        }
        if let Some(file) = &file.harness.coverage_answer_file {
            judge_templates.answer = read_template(base_dir, file)?;
        }
        judge_templates
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;

        let roles = RoleBindings {
            judge: file.harness.judge,
            answerer: file.harness.answerer,
            checker: file.harness.checker,
            generator: file.harness.generator,
        };
        for role_id in [
            &roles.judge,
            &roles.answerer,
            &roles.checker,
            &roles.generator,
        ]
        .into_iter()
        .flatten()
        {
            find(role_id)?;
        }

        let mut config = RunConfig {
            endpoints,
            mock_scripts,
            pipeline,
            judge_templates,
            roles,
            cache_dir: overrides
                .cache_dir
                .clone()
                .or(file.cache_dir)
                .unwrap_or_else(|| PathBuf::from(".capmas-cache")),
            concurrency: overrides.concurrency.or(file.concurrency).unwrap_or(4),
            output: overrides
                .output
                .clone()
                .or(file.output)
                .ok_or_else(|| CliError::Config("output path required".into()))?,
            format: overrides
                .format
                .or(file.format)
                .unwrap_or(OutputFormat::Json),
            seed: overrides.seed.or(file.seed).unwrap_or(0),
            config_digest: String::new(),
        };
        if let Some(pipeline) = &mut config.pipeline {
            if let Some(pi) = overrides.pi {
                pipeline.pi = pi;
            }
            if let Some(epsilon) = overrides.epsilon {
                pipeline.epsilon = epsilon;
            }
            pipeline
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        if config.concurrency == 0 {
            return Err(CliError::Config("concurrency must be >= 1".into()));
        }
        config.config_digest = config.compute_digest();
        Ok(config)
    }

    /// Digest over everything that influences results: endpoints, mock
    /// scripts, pipeline knobs, templates, seed.
    fn compute_digest(&self) -> String {
        #[derive(Serialize)]
        struct DigestView<'a> {
            endpoints: &'a Vec<ModelEndpoint>,
            mock_scripts: &'a Vec<(String, MockScript)>,
            pipeline: &'a Option<PipelineConfig>,
            judge_templates: &'a JudgeTemplates,
            roles: &'a RoleBindings,
            seed: u64,
        }
        let view = DigestView {
            endpoints: &self.endpoints,
            mock_scripts: &self.mock_scripts,
            pipeline: &self.pipeline,
            judge_templates: &self.judge_templates,
            roles: &self.roles,
            seed: self.seed,
        };
        sha256_hex(&serde_json::to_vec(&view).expect("config serializes"))
    }

    /// Build the gateway (creating the cache dir) and register every
    /// mock script.
    pub fn build_gateway(&self) -> Result<Gateway, CliError> {
        let gateway = Gateway::with_cache_dir(&self.cache_dir)
            .map_err(|e| CliError::Config(format!("cache dir: {e}")))?;
        for (endpoint_id, script) in &self.mock_scripts {
            gateway
                .register_mock(endpoint_id, script.clone())
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(gateway)
    }

    pub fn endpoint(&self, id: &str) -> Result<&ModelEndpoint, CliError> {
        self.endpoints
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| CliError::Config(format!("endpoint id {id:?} does not resolve")))
    }

    pub fn role_endpoint(
        &self,
        role: &str,
        id: &Option<String>,
    ) -> Result<&ModelEndpoint, CliError> {
        let id = id
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("harness role {role:?} is not bound")))?;
        self.endpoint(id)
    }

    /// Provenance-ready endpoint map: every configured endpoint id with
    /// its model name.
    pub fn endpoint_map(&self) -> BTreeMap<String, String> {
        self.endpoints
            .iter()
            .map(|e| (e.id.clone(), e.model_name.clone()))
            .collect()
    }
}

fn load_prompt_templates(
    section: &TemplateSection,
    base_dir: &Path,
) -> Result<PromptTemplates, CliError> {
    let mut templates = PromptTemplates::default();
    if let Some(file) = &section.decompose_file {
        templates.decompose = read_template(base_dir, file)?;
    }
    if let Some(file) = &section.correct_file {
        templates.correct = read_template(base_dir, file)?;
    }
    if let Some(file) = &section.summarize_file {
        templates.summarize = read_template(base_dir, file)?;
    }
    if let Some(prefix) = &section.tf_prefix {
        templates.tf_prefix = prefix.clone();
    }
    templates
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(templates)
}

fn read_template(base_dir: &Path, file: &Path) -> Result<String, CliError> {
    let path = base_dir.join(file);
    std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_script(dir: &Path, name: &str) -> PathBuf {
        let script = MockScript::fixed("ok");
        let path = dir.join(name);
        let mut file = std::fs::File::create(&path).unwrap();
        write!(file, "{}", serde_json::to_string(&script).unwrap()).unwrap();
        path
    }

    fn minimal_config(dir: &Path) -> String {
        write_script(dir, "d.json");
        format!(
            r#"
cache_dir = "{cache}"
output = "{out}"

[[endpoints]]
id = "d"
kind = "mock"
script_file = "d.json"

[[endpoints]]
id = "c"
kind = "mock"
script_file = "d.json"

[[endpoints]]
id = "r"
kind = "mock"
script_file = "d.json"

[pipeline]
pi = 0.5
decomposer = "d"
fact_checker = "c"
corrector = "r"
"#,
            cache = dir.join("cache").display(),
            out = dir.join("out.jsonl").display(),
        )
    }

    #[test]
    fn loads_and_resolves_roles() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("run.toml");
        std::fs::write(&config_path, minimal_config(dir.path())).unwrap();
        let config = RunConfig::load(&config_path, &Overrides::default()).unwrap();
        assert_eq!(config.endpoints.len(), 3);
        assert_eq!(config.mock_scripts.len(), 3);
        let pipeline = config.pipeline.as_ref().unwrap();
        assert_eq!(pipeline.pi, 0.5);
        assert_eq!(pipeline.fact_checker.id, "c");
        assert_eq!(config.config_digest.len(), 64);
    }

    #[test]
    fn flag_overrides_win_over_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("run.toml");
        std::fs::write(&config_path, minimal_config(dir.path())).unwrap();
        let overrides = Overrides {
            pi: Some(0.3),
            epsilon: Some(1e-4),
            seed: Some(9),
            format: Some(OutputFormat::Csv),
            ..Default::default()
        };
        let config = RunConfig::load(&config_path, &overrides).unwrap();
        let pipeline = config.pipeline.as_ref().unwrap();
        assert_eq!(pipeline.pi, 0.3);
        assert_eq!(pipeline.epsilon, 1e-4);
        assert_eq!(config.seed, 9);
        assert_eq!(config.format, OutputFormat::Csv);
    }

    #[test]
    fn unresolved_endpoint_reference_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        write_script(dir.path(), "d.json");
        let config_path = dir.path().join("run.toml");
        std::fs::write(
            &config_path,
            format!(
                r#"
output = "{out}"

[[endpoints]]
id = "d"
kind = "mock"
script_file = "d.json"

[pipeline]
decomposer = "d"
fact_checker = "missing"
corrector = "d"
"#,
                out = dir.path().join("o").display()
            ),
        )
        .unwrap();
        let err = RunConfig::load(&config_path, &Overrides::default()).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        assert!(err.to_string().contains("missing"));
    }

    #[test]
    fn missing_api_key_env_fails_before_any_call() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("run.toml");
        std::fs::write(
            &config_path,
            format!(
                r#"
output = "{out}"

[[endpoints]]
id = "live"
kind = "vision"
base_url = "https://api.example.com/v1"
model_name = "m"
api_key_ref = "CAPMAS_TEST_KEY_THAT_IS_NOT_SET"
"#,
                out = dir.path().join("o").display()
            ),
        )
        .unwrap();
        let err = RunConfig::load(&config_path, &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("CAPMAS_TEST_KEY_THAT_IS_NOT_SET"));
    }

    #[test]
    fn mock_endpoint_without_script_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("run.toml");
        std::fs::write(
            &config_path,
            format!(
                r#"
output = "{out}"

[[endpoints]]
id = "m"
kind = "mock"
"#,
                out = dir.path().join("o").display()
            ),
        )
        .unwrap();
        let err = RunConfig::load(&config_path, &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("script_file"));
    }
}
