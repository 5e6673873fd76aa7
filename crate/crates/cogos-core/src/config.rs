//! Run configuration: one TOML file describing the world, the robots, the
//! module enable-mask, backend bindings per role, databases, and limits.
//! A validated config builds into a [`Session`]: the world, bus, stores,
//! and one behavior loop per robot, ready to run tasks.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    CompletionBackend, RecordingBackend, RemoteBackend, RemoteConfig, ScriptedBackend,
};
use crate::bus::Bus;
use crate::exec::SimExecutor;
use crate::orchestrator::{EventSink, ModuleRegistry, Orchestrator, RunLimits};
use crate::perception::PerceptionModule;
use crate::profile::RobotProfile;
use crate::rag::{shared, EthicsModule, MemoryModule, PatternModule, SharedStore};
use crate::transcript::Transcript;
use crate::vector::VectorStore;
use crate::world::{SharedWorld, World};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    World(#[from] crate::world::WorldError),
    #[error(transparent)]
    Store(#[from] crate::vector::StoreError),
    #[error(transparent)]
    Script(#[from] crate::backend::ScriptError),
    #[error(transparent)]
    Rag(#[from] crate::rag::RagError),
    #[error("backend setup failed: {0}")]
    Backend(#[from] crate::backend::BackendError),
}

/// The {memory, patterns, ethics, perception} enable-mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModuleMask {
    pub memory: bool,
    pub patterns: bool,
    pub ethics: bool,
    pub perception: bool,
}

impl ModuleMask {
    pub fn all() -> ModuleMask {
        ModuleMask {
            memory: true,
            patterns: true,
            ethics: true,
            perception: true,
        }
    }

    /// Disables one module by name; unknown names are rejected upstream.
    pub fn without(mut self, module: &str) -> ModuleMask {
        match module {
            "memory" => self.memory = false,
            "patterns" => self.patterns = false,
            "ethics" => self.ethics = false,
            "perception" => self.perception = false,
            _ => {}
        }
        self
    }

    pub const NAMES: [&'static str; 4] = ["memory", "patterns", "ethics", "perception"];
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LimitsSection {
    pub max_steps: usize,
    pub listen_timeout_ms: u64,
    pub recall_k: usize,
    pub patterns_n: usize,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for LimitsSection {
    fn default() -> LimitsSection {
        let limits = RunLimits::default();
        LimitsSection {
            max_steps: limits.max_steps,
            listen_timeout_ms: limits.listen_timeout.as_millis() as u64,
            recall_k: limits.recall_k,
            patterns_n: limits.patterns_n,
            temperature: limits.temperature,
            max_tokens: limits.max_tokens,
        }
    }
}

impl LimitsSection {
    pub fn to_run_limits(&self) -> RunLimits {
        RunLimits {
            max_steps: self.max_steps,
            listen_timeout: Duration::from_millis(self.listen_timeout_ms),
            recall_k: self.recall_k,
            patterns_n: self.patterns_n,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendBinding {
    Script {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        record: Option<PathBuf>,
    },
    Remote {
        #[serde(flatten)]
        remote: RemoteConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        record: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendsSection {
    pub behavior: Option<BackendBinding>,
    pub extractor: Option<BackendBinding>,
    pub judge: Option<BackendBinding>,
    pub vision: Option<BackendBinding>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DatabasesSection {
    /// Memory preseed: `.jsonl` rows or a `.covs` binary store.
    pub memory: Option<PathBuf>,
    pub patterns: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    /// Persist the memory store here when a run completes.
    pub save_memory: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotSection {
    pub id: String,
    /// Platform preset (`quadruped`, `arm`) or `custom` with `profile`.
    pub platform: String,
    pub start_location: String,
    /// Standing task run when another robot receives the operator task.
    #[serde(default)]
    pub task: Option<String>,
    #[serde(default)]
    pub profile: Option<RobotProfile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BusSection {
    pub global_audibility: bool,
}

impl Default for BusSection {
    fn default() -> BusSection {
        BusSection {
            global_audibility: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> OutputSection {
        OutputSection {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptSection {
    pub preamble: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldSection {
    pub file: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub world: WorldSection,
    #[serde(default)]
    pub limits: LimitsSection,
    #[serde(default)]
    pub modules: ModuleMask,
    #[serde(default)]
    pub bus: BusSection,
    #[serde(default)]
    pub backends: BackendsSection,
    #[serde(default)]
    pub databases: DatabasesSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub prompt: PromptSection,
    pub robots: Vec<RobotSection>,
}

impl RunConfig {
    /// Parses and validates a config file. Relative paths resolve against
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let data = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut config: RunConfig =
            toml::from_str(&data).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut self.world.file);
        for binding in [
            &mut self.backends.behavior,
            &mut self.backends.extractor,
            &mut self.backends.judge,
            &mut self.backends.vision,
        ]
        .into_iter()
        .flatten()
        {
            match binding {
                BackendBinding::Script { path, record } => {
                    resolve(path);
                    if let Some(record) = record {
                        resolve(record);
                    }
                }
                BackendBinding::Remote { record, .. } => {
                    if let Some(record) = record {
                        resolve(record);
                    }
                }
            }
        }
        for db in [
            &mut self.databases.memory,
            &mut self.databases.patterns,
            &mut self.databases.rules,
            &mut self.databases.save_memory,
        ]
        .into_iter()
        .flatten()
        {
            resolve(db);
        }
        resolve(&mut self.output.dir);
    }

    /// Invariants: referenced files exist, robots are unique with known
    /// platforms, and every enabled module that needs a backend has one.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let must_exist = |path: &Path, what: &str| {
            if path.exists() {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!(
                    "{what} `{}` does not exist",
                    path.display()
                )))
            }
        };
        must_exist(&self.world.file, "world file")?;
        if self.robots.is_empty() {
            return Err(ConfigError::Invalid("no robots configured".to_string()));
        }
        let mut ids = BTreeSet::new();
        for robot in &self.robots {
            if !ids.insert(robot.id.clone()) {
                return Err(ConfigError::Invalid(format!(
                    "duplicate robot id `{}`",
                    robot.id
                )));
            }
            if robot.profile.is_none() && RobotProfile::preset(&robot.platform, &robot.id).is_none()
            {
                return Err(ConfigError::Invalid(format!(
                    "robot `{}`: unknown platform `{}` and no inline profile",
                    robot.id, robot.platform
                )));
            }
        }
        if self.backends.behavior.is_none() {
            return Err(ConfigError::Invalid(
                "the behavior backend binding is mandatory".to_string(),
            ));
        }
        if self.modules.ethics && self.backends.judge.is_none() {
            return Err(ConfigError::Invalid(
                "ethics module is enabled but no judge backend is bound".to_string(),
            ));
        }
        for binding in [
            &self.backends.behavior,
            &self.backends.extractor,
            &self.backends.judge,
            &self.backends.vision,
        ]
        .into_iter()
        .flatten()
        {
            if let BackendBinding::Script { path, .. } = binding {
                must_exist(path, "script file")?;
            }
        }
        for db in [
            &self.databases.memory,
            &self.databases.patterns,
            &self.databases.rules,
        ]
        .into_iter()
        .flatten()
        {
            must_exist(db, "database file")?;
        }
        Ok(())
    }

    pub fn profile_for(&self, robot: &RobotSection) -> RobotProfile {
        robot
            .profile
            .clone()
            .or_else(|| RobotProfile::preset(&robot.platform, &robot.id))
            .expect("validated platform")
    }
}

fn build_backend(
    binding: &BackendBinding,
    role: &str,
) -> Result<Arc<dyn CompletionBackend>, ConfigError> {
    match binding {
        BackendBinding::Script { path, record } => {
            let scripted = ScriptedBackend::load(path)?;
            match record {
                None => Ok(Arc::new(scripted)),
                Some(record) => {
                    ensure_parent(record)?;
                    Ok(Arc::new(RecordingBackend::create(scripted, record)?))
                }
            }
        }
        BackendBinding::Remote { remote, record } => {
            let client = RemoteBackend::new(remote.clone()).map_err(|e| {
                ConfigError::Invalid(format!("remote {role} backend: {e}"))
            })?;
            match record {
                None => Ok(Arc::new(client)),
                Some(record) => {
                    ensure_parent(record)?;
                    Ok(Arc::new(RecordingBackend::create(client, record)?))
                }
            }
        }
    }
}

fn ensure_parent(path: &Path) -> Result<(), ConfigError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| ConfigError::Io {
            path: parent.display().to_string(),
            source: e,
        })?;
    }
    Ok(())
}

/// One robot's runtime: its profile and its behavior loop.
pub struct RobotRuntime {
    pub profile: RobotProfile,
    pub standing_task: Option<String>,
    pub orchestrator: Orchestrator,
}

/// A built runtime: world, bus, stores, and per-robot loops.
pub struct Session {
    pub config: RunConfig,
    pub world: SharedWorld,
    pub bus: Arc<Bus>,
    pub memory_store: Option<SharedStore>,
    pub robots: Vec<RobotRuntime>,
}

/// A (robot, task) pair scheduled for one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskAssignment {
    pub robot_id: String,
    pub task: String,
}

impl Session {
    /// Builds the full runtime from a validated config. `events`, when
    /// given, receives live step/done events from every robot loop.
    pub fn build(config: &RunConfig, events: Option<EventSink>) -> Result<Session, ConfigError> {
        Self::build_with_world_file(config, &config.world.file, events)
    }

    /// As [`Session::build`] with a different world fixture (used by the
    /// evaluation harness for per-case worlds).
    pub fn build_with_world_file(
        config: &RunConfig,
        world_file: &Path,
        events: Option<EventSink>,
    ) -> Result<Session, ConfigError> {
        let mut world = World::load(world_file)?;
        let bus = Arc::new(Bus::new(config.bus.global_audibility));
        for robot in &config.robots {
            let profile = config.profile_for(robot);
            world.add_robot(
                &robot.id,
                &robot.start_location,
                profile.has_gripper,
                profile.has_basket,
            )?;
            bus.register(&robot.id, Some(&robot.start_location));
        }
        let world: SharedWorld = Arc::new(tokio::sync::Mutex::new(world));

        let behavior = build_backend(
            config
                .backends
                .behavior
                .as_ref()
                .expect("validated behavior binding"),
            "behavior",
        )?;
        let extractor = config
            .backends
            .extractor
            .as_ref()
            .map(|b| build_backend(b, "extractor"))
            .transpose()?;
        let judge = config
            .backends
            .judge
            .as_ref()
            .map(|b| build_backend(b, "judge"))
            .transpose()?;
        let vision = config
            .backends
            .vision
            .as_ref()
            .map(|b| build_backend(b, "vision"))
            .transpose()?;

        // Memory store: optional preseed from JSONL rows or a binary store.
        let memory_store = if config.modules.memory {
            let store = match &config.databases.memory {
                None => VectorStore::with_default_embedder(),
                Some(path) if path.extension().and_then(|e| e.to_str()) == Some("covs") => {
                    VectorStore::load(path)?
                }
                Some(path) => {
                    let mut store = VectorStore::with_default_embedder();
                    store.import_jsonl(path)?;
                    store
                }
            };
            Some(shared(store))
        } else {
            None
        };
        let memory_module = memory_store
            .clone()
            .map(|store| Arc::new(MemoryModule::new(store, extractor.clone())));

        let pattern_module = if config.modules.patterns {
            let store = shared(VectorStore::with_default_embedder());
            match &config.databases.patterns {
                None => Some(Arc::new(PatternModule::new(store))),
                Some(path) => Some(Arc::new(PatternModule::load_jsonl(store, path)?)),
            }
        } else {
            None
        };

        let ethics_module = if config.modules.ethics {
            let store = shared(VectorStore::with_default_embedder());
            if let Some(path) = &config.databases.rules {
                EthicsModule::load_rules_jsonl(&store, path)?;
            }
            let judge = judge.ok_or_else(|| {
                ConfigError::Invalid("ethics module requires a judge backend".to_string())
            })?;
            Some(Arc::new(EthicsModule::new(store, judge)))
        } else {
            None
        };

        let perception_module = if config.modules.perception {
            Some(Arc::new(match vision {
                Some(backend) => PerceptionModule::vision(backend),
                None => PerceptionModule::sim(),
            }))
        } else {
            None
        };

        let limits = config.limits.to_run_limits();
        let executor = Arc::new(SimExecutor::new(
            world.clone(),
            bus.clone(),
            limits.listen_timeout,
        ));

        let mut robots = Vec::new();
        for robot in &config.robots {
            let profile = config.profile_for(robot);
            let mut registry = ModuleRegistry::minimal(behavior.clone(), executor.clone());
            if let Some(perception) = &perception_module {
                registry = registry.with_perception(perception.clone());
            }
            registry.memory = memory_module.clone();
            registry.patterns = pattern_module.clone();
            registry.ethics = ethics_module.clone();
            let mut orchestrator = Orchestrator::new(profile.clone(), registry, limits.clone());
            if let Some(preamble) = &config.prompt.preamble {
                orchestrator = orchestrator.with_preamble(preamble.clone());
            }
            if let Some(sink) = &events {
                orchestrator = orchestrator.with_events(sink.clone());
            }
            robots.push(RobotRuntime {
                profile,
                standing_task: robot.task.clone(),
                orchestrator,
            });
        }

        Ok(Session {
            config: config.clone(),
            world,
            bus,
            memory_store,
            robots,
        })
    }

    /// The operator task goes to `robot` (default: the first configured
    /// robot); every other robot with a standing task runs it
    /// concurrently. The addressed robot's assignment comes first.
    pub fn assignments(
        &self,
        task: &str,
        robot: Option<&str>,
    ) -> Result<Vec<TaskAssignment>, ConfigError> {
        let primary_id = match robot {
            Some(id) => {
                if !self.robots.iter().any(|r| r.profile.robot_id == id) {
                    return Err(ConfigError::Invalid(format!("no robot `{id}` configured")));
                }
                id.to_string()
            }
            None => self.robots[0].profile.robot_id.clone(),
        };
        let mut assignments = vec![TaskAssignment {
            robot_id: primary_id.clone(),
            task: task.to_string(),
        }];
        for robot in &self.robots {
            if robot.profile.robot_id == primary_id {
                continue;
            }
            if let Some(standing) = &robot.standing_task {
                assignments.push(TaskAssignment {
                    robot_id: robot.profile.robot_id.clone(),
                    task: standing.clone(),
                });
            }
        }
        Ok(assignments)
    }

    /// Runs every assignment concurrently (one loop per robot) and returns
    /// transcripts in assignment order.
    pub async fn run_assignments(&self, assignments: &[TaskAssignment]) -> Vec<Transcript> {
        let futures: Vec<_> = assignments
            .iter()
            .map(|assignment| {
                let runtime = self
                    .robots
                    .iter()
                    .find(|r| r.profile.robot_id == assignment.robot_id)
                    .expect("assignments reference configured robots");
                runtime.orchestrator.run(&assignment.task)
            })
            .collect();
        futures::future::join_all(futures).await
    }

    /// Persists the memory store if the config asks for it.
    pub fn persist_memory(&self) -> Result<Option<PathBuf>, ConfigError> {
        let (Some(store), Some(path)) = (&self.memory_store, &self.config.databases.save_memory)
        else {
            return Ok(None);
        };
        ensure_parent(path)?;
        store.read().unwrap().persist(path)?;
        Ok(Some(path.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, content: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    fn basic_world(dir: &Path) -> PathBuf {
        write_file(
            dir,
            "w.world",
            r#"{"locations":[{"name":"dock","adjacent":[]}],"objects":[],"users":[],"seed":1}"#,
        )
    }

    fn basic_script(dir: &Path) -> PathBuf {
        write_file(
            dir,
            "s.jsonl",
            "{\"match\":{\"type\":\"turn\",\"index\":0},\"response\":\"FINISH\"}\n",
        )
    }

    fn minimal_config_toml() -> &'static str {
        r#"
[world]
file = "w.world"

[backends.behavior]
kind = "script"
path = "s.jsonl"

[[robots]]
id = "dog"
platform = "quadruped"
start_location = "dock"
"#
    }

    #[test]
    fn loads_and_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        basic_world(dir.path());
        basic_script(dir.path());
        let path = write_file(dir.path(), "run.toml", minimal_config_toml());
        let config = RunConfig::load(&path).unwrap();
        assert!(config.world.file.is_absolute() || config.world.file.starts_with(dir.path()));
        assert_eq!(config.limits.max_steps, 50);
        assert!(!config.modules.memory);
    }

    #[test]
    fn missing_world_file_is_invalid() {
        let dir = tempfile::tempdir().unwrap();
        basic_script(dir.path());
        let path = write_file(dir.path(), "run.toml", minimal_config_toml());
        let err = RunConfig::load(&path).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
        assert!(err.to_string().contains("world file"));
    }

    #[test]
    fn ethics_without_judge_is_invalid() {
        let dir = tempfile::tempdir().unwrap();
        basic_world(dir.path());
        basic_script(dir.path());
        let toml = format!("{}\n[modules]\nethics = true\n", minimal_config_toml());
        let path = write_file(dir.path(), "run.toml", &toml);
        let err = RunConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("judge"));
    }

    #[test]
    fn unknown_platform_is_invalid() {
        let dir = tempfile::tempdir().unwrap();
        basic_world(dir.path());
        basic_script(dir.path());
        let toml = minimal_config_toml().replace("quadruped", "hovercraft");
        let path = write_file(dir.path(), "run.toml", &toml);
        let err = RunConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("hovercraft"));
    }

    #[tokio::test]
    async fn builds_and_runs_a_minimal_session() {
        let dir = tempfile::tempdir().unwrap();
        basic_world(dir.path());
        basic_script(dir.path());
        let path = write_file(dir.path(), "run.toml", minimal_config_toml());
        let config = RunConfig::load(&path).unwrap();
        let session = Session::build(&config, None).unwrap();
        let assignments = session.assignments("do nothing", None).unwrap();
        assert_eq!(assignments.len(), 1);
        let transcripts = session.run_assignments(&assignments).await;
        assert_eq!(transcripts.len(), 1);
        assert_eq!(
            transcripts[0].outcome,
            crate::transcript::RunOutcome::Finished
        );
    }

    #[test]
    fn assignments_route_standing_tasks() {
        let dir = tempfile::tempdir().unwrap();
        write_file(
            dir.path(),
            "w.world",
            r#"{"locations":[{"name":"dock","adjacent":[]},{"name":"table","adjacent":[]}],"objects":[],"users":[]}"#,
        );
        basic_script(dir.path());
        let toml = format!(
            "{}\n[[robots]]\nid = \"arm\"\nplatform = \"arm\"\nstart_location = \"table\"\ntask = \"assist\"\n",
            minimal_config_toml()
        );
        let path = write_file(dir.path(), "run.toml", &toml);
        let config = RunConfig::load(&path).unwrap();
        let session = Session::build(&config, None).unwrap();
        let assignments = session.assignments("deliver", Some("dog")).unwrap();
        assert_eq!(
            assignments,
            vec![
                TaskAssignment {
                    robot_id: "dog".to_string(),
                    task: "deliver".to_string()
                },
                TaskAssignment {
                    robot_id: "arm".to_string(),
                    task: "assist".to_string()
                },
            ]
        );
        assert!(session.assignments("x", Some("ghost")).is_err());
    }
}
