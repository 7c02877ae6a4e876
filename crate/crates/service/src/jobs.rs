//! Job registry and worker threads.

use std::num::NonZeroUsize;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;

use intrinsic_core::colorspace::LinearImage;
use intrinsic_core::energy::EnergyBreakdown;
use intrinsic_core::naming::{ColorComposition, NamingModel};
use intrinsic_core::scenes::Artifacts;
use intrinsic_core::solver::{decompose, RunReport, SolverConfig, TraceRow};
use lru::LruCache;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_finished(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JobProgress {
    pub iteration: usize,
    pub energy: f64,
}

/// Everything a worker needs to run a job.
struct JobInput {
    image: LinearImage,
    config: SolverConfig,
}

pub struct Job {
    pub id: String,
    pub status: JobStatus,
    pub annotation: ColorComposition,
    pub progress: Option<JobProgress>,
    pub trace: Vec<TraceRow>,
    pub artifacts: Option<Arc<Artifacts>>,
    pub report: Option<serde_json::Value>,
    pub error: Option<String>,
    input: Option<JobInput>,
}

/// Status document returned by `GET /api/jobs/{id}`.
#[derive(Debug, Clone, Serialize)]
pub struct JobView {
    pub id: String,
    pub status: JobStatus,
    pub annotation: ColorComposition,
    pub progress: Option<JobProgress>,
    pub trace: Vec<TraceView>,
    pub artifacts: Option<serde_json::Map<String, serde_json::Value>>,
    pub achieved: Option<serde_json::Value>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TraceView {
    pub iter: usize,
    #[serde(flatten)]
    pub energy: EnergyBreakdown,
}

/// Artifact kinds served per job, with their file names and content types.
pub const ARTIFACT_KINDS: [(&str, &str, &str); 5] = [
    ("reflectance", "reflectance.png", "image/png"),
    ("shading", "shading.png", "image/png"),
    ("names", "names.png", "image/png"),
    ("trace", "trace.csv", "text/csv; charset=utf-8"),
    ("report", "report.json", "application/json"),
];

impl Job {
    pub fn view(&self) -> JobView {
        let artifacts = self.artifacts.as_ref().map(|_| {
            ARTIFACT_KINDS
                .iter()
                .map(|(kind, _, _)| {
                    (
                        kind.to_string(),
                        serde_json::Value::String(format!("/api/jobs/{}/artifacts/{kind}", self.id)),
                    )
                })
                .collect()
        });
        JobView {
            id: self.id.clone(),
            status: self.status,
            annotation: self.annotation,
            progress: self.progress,
            trace: self
                .trace
                .iter()
                .map(|r| TraceView {
                    iter: r.iter,
                    energy: r.energy,
                })
                .collect(),
            artifacts,
            achieved: self.report.as_ref().and_then(|r| r.get("achieved").cloned()),
            error: self.error.clone(),
        }
    }
}

/// Jobs by id in least-recently-used order. Only finished jobs are evicted,
/// so the store can exceed its capacity while many jobs are pending.
pub struct Registry {
    jobs: LruCache<String, Job>,
    capacity: usize,
}

impl Registry {
    pub fn new(capacity: usize) -> Self {
        Self {
            jobs: LruCache::unbounded(),
            capacity: capacity.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.jobs.contains(id)
    }

    /// Looks up a job and marks it recently used.
    pub fn get(&mut self, id: &str) -> Option<&Job> {
        self.jobs.get(id)
    }

    fn peek_mut(&mut self, id: &str) -> Option<&mut Job> {
        self.jobs.peek_mut(id)
    }

    fn insert(&mut self, job: Job) {
        self.jobs.put(job.id.clone(), job);
        while self.jobs.len() > self.capacity {
            let victim = self
                .jobs
                .iter()
                .rev()
                .find(|(_, j)| j.status.is_finished())
                .map(|(id, _)| id.clone());
            match victim {
                Some(id) => {
                    self.jobs.pop(&id);
                }
                None => break,
            }
        }
    }
}

/// Registry plus the FIFO queue feeding the workers.
pub struct JobQueue {
    registry: Arc<Mutex<Registry>>,
    sender: Mutex<Option<Sender<String>>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

fn lock(registry: &Mutex<Registry>) -> MutexGuard<'_, Registry> {
    // a panicking worker is caught before it can poison the lock, but stay
    // usable regardless
    registry.lock().unwrap_or_else(|e| e.into_inner())
}

impl JobQueue {
    /// Starts `workers` threads sharing one FIFO queue.
    pub fn start(workers: NonZeroUsize, capacity: usize, model: Arc<NamingModel>) -> Self {
        let registry = Arc::new(Mutex::new(Registry::new(capacity)));
        let (tx, rx) = mpsc::channel::<String>();
        let rx = Arc::new(Mutex::new(rx));
        let handles = (0..workers.get())
            .map(|i| {
                let registry = Arc::clone(&registry);
                let rx = Arc::clone(&rx);
                let model = Arc::clone(&model);
                std::thread::Builder::new()
                    .name(format!("decompose-{i}"))
                    .spawn(move || worker_loop(&registry, &rx, &model))
                    .expect("spawn worker thread")
            })
            .collect();
        Self {
            registry,
            sender: Mutex::new(Some(tx)),
            workers: Mutex::new(handles),
        }
    }

    /// Registers a queued job and returns its id.
    pub fn submit(&self, image: LinearImage, annotation: ColorComposition, config: SolverConfig) -> String {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let job = Job {
            id: id.clone(),
            status: JobStatus::Queued,
            annotation,
            progress: None,
            trace: Vec::new(),
            artifacts: None,
            report: None,
            error: None,
            input: Some(JobInput { image, config }),
        };
        lock(&self.registry).insert(job);
        let sender = self.sender.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(tx) = sender.as_ref() {
            // the receiver lives as long as any worker does
            let _ = tx.send(id.clone());
        }
        id
    }

    pub fn with_job<T>(&self, id: &str, f: impl FnOnce(&Job) -> T) -> Option<T> {
        lock(&self.registry).get(id).map(f)
    }

    pub fn registry(&self) -> &Arc<Mutex<Registry>> {
        &self.registry
    }

    /// Stops accepting work and joins the workers after the queue drains.
    pub fn shutdown(&self) {
        self.sender.lock().unwrap_or_else(|e| e.into_inner()).take();
        let handles = std::mem::take(&mut *self.workers.lock().unwrap_or_else(|e| e.into_inner()));
        for h in handles {
            let _ = h.join();
        }
    }
}

impl Drop for JobQueue {
    fn drop(&mut self) {
        self.sender.lock().unwrap_or_else(|e| e.into_inner()).take();
    }
}

fn worker_loop(registry: &Mutex<Registry>, rx: &Mutex<Receiver<String>>, model: &NamingModel) {
    loop {
        let next = rx.lock().unwrap_or_else(|e| e.into_inner()).recv();
        let Ok(id) = next else { return };
        let taken = {
            let mut reg = lock(registry);
            reg.peek_mut(&id).and_then(|job| {
                let input = job.input.take()?;
                job.status = JobStatus::Running;
                Some((input, job.annotation))
            })
        };
        // evicted or already taken
        let Some((input, annotation)) = taken else { continue };
        let outcome = catch_unwind(AssertUnwindSafe(|| run_job(registry, &id, &input, &annotation, model)))
            .unwrap_or_else(|_| Err("solver panicked".to_string()));
        let mut reg = lock(registry);
        if let Some(job) = reg.peek_mut(&id) {
            match outcome {
                Ok((trace, artifacts, report)) => {
                    job.trace = trace;
                    job.artifacts = Some(Arc::new(artifacts));
                    job.report = Some(report);
                    job.status = JobStatus::Done;
                }
                Err(msg) => {
                    job.error = Some(msg);
                    job.status = JobStatus::Failed;
                }
            }
        }
    }
}

type JobOutcome = Result<(Vec<TraceRow>, Artifacts, serde_json::Value), String>;

fn run_job(
    registry: &Mutex<Registry>,
    id: &str,
    input: &JobInput,
    annotation: &ColorComposition,
    model: &NamingModel,
) -> JobOutcome {
    let mut observer = |p: &intrinsic_core::solver::Progress| {
        if let Some(job) = lock(registry).peek_mut(id) {
            job.progress = Some(JobProgress {
                iteration: p.iteration,
                energy: p.energy.total,
            });
            job.trace.push(TraceRow {
                iter: p.iteration,
                energy: p.energy,
            });
        }
    };
    let out = decompose(&input.image, annotation, &input.config, model, &mut observer)
        .map_err(|e| e.to_string())?;
    let report = RunReport::new(&out, &input.config).to_json();
    let artifacts = Artifacts::build(&out.decomposition, &out.state.trace, &report).map_err(|e| e.to_string())?;
    Ok((out.state.trace, artifacts, report))
}
