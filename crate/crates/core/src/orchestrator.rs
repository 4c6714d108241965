//! Asynchronous queue-worker engine for document conversion.
//!
//! [`Orchestrator::submit`] parses the upload, records a `Queued` task and
//! fans out one `Route` subtask per page, then returns the task id. Workers
//! call [`Orchestrator::worker_step`] repeatedly; each call pops one subtask,
//! runs its stage and records the result keyed by `(task, page, stage)`.
//! A finished `Route` enqueues the page's `Segment` subtask. When every page
//! is segmented, the worker that observed the last one runs the join, which
//! assembles the document and hands it to the [`DocumentSink`].
//!
//! Delivery is at-least-once; result writes are idempotent per key, so a
//! redelivered subtask never double-counts. Workers keep no state between
//! steps.

use std::collections::{HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conversion::{self, FormatHint, IdentityOcr, OcrEngine, PageSource, StageResult};
use crate::docmodel::Document;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OrchestratorError {
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("task {0} is not complete")]
    TaskNotComplete(String),
    #[error("task {task_id} failed: {error}")]
    TaskFailed { task_id: String, error: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Queued,
    Running,
    Done,
    Failed,
}

impl TaskState {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Done | Self::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub state: TaskState,
    pub submitted_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub doc_id: Option<String>,
    pub error: Option<String>,
    pub subtasks_total: usize,
    pub subtasks_done: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Route,
    Segment,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subtask {
    pub task_id: String,
    pub page_index: usize,
    pub stage: Stage,
    pub attempts: u32,
    pub payload: PageSource,
}

/// Subtask queue. The in-process [`FifoQueue`] is the default; an external
/// broker can stand in by implementing this trait.
pub trait SubtaskQueue: Send + Sync {
    fn push(&self, subtask: Subtask);
    fn pop(&self) -> Option<Subtask>;
    /// Drop every queued subtask of `task_id`.
    fn discard_task(&self, task_id: &str);
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Default)]
pub struct FifoQueue {
    items: Mutex<VecDeque<Subtask>>,
}

impl SubtaskQueue for FifoQueue {
    fn push(&self, subtask: Subtask) {
        self.items.lock().push_back(subtask);
    }

    fn pop(&self) -> Option<Subtask> {
        self.items.lock().pop_front()
    }

    fn discard_task(&self, task_id: &str) {
        self.items.lock().retain(|s| s.task_id != task_id);
    }

    fn len(&self) -> usize {
        self.items.lock().len()
    }
}

/// The per-page work a worker performs.
pub trait PageStages: Send + Sync {
    /// Route the page and return its post-OCR text.
    fn route(&self, page: &PageSource) -> Result<PageSource, String>;
    fn segment(&self, page: &PageSource) -> Result<StageResult, String>;
}

/// Conversion-module stages with a pluggable OCR engine.
pub struct ConversionStages {
    ocr: Box<dyn OcrEngine>,
}

impl ConversionStages {
    pub fn new(ocr: Box<dyn OcrEngine>) -> Self {
        Self { ocr }
    }
}

impl Default for ConversionStages {
    fn default() -> Self {
        Self::new(Box::new(IdentityOcr))
    }
}

impl PageStages for ConversionStages {
    fn route(&self, page: &PageSource) -> Result<PageSource, String> {
        conversion::extract_page_text(page, self.ocr.as_ref())
    }

    fn segment(&self, page: &PageSource) -> Result<StageResult, String> {
        conversion::segment_layout(page).map_err(|e| e.to_string())
    }
}

/// Receives each assembled document; the library indexes and persists it.
pub trait DocumentSink: Send + Sync {
    fn store(&self, document: &Document) -> Result<(), String>;
}

/// Keeps documents in memory, keyed by id.
#[derive(Debug, Default)]
pub struct MemorySink {
    docs: Mutex<HashMap<String, Document>>,
    stores: Mutex<usize>,
}

impl MemorySink {
    pub fn get(&self, doc_id: &str) -> Option<Document> {
        self.docs.lock().get(doc_id).cloned()
    }

    /// Number of `store` calls seen.
    pub fn store_count(&self) -> usize {
        *self.stores.lock()
    }
}

impl DocumentSink for MemorySink {
    fn store(&self, document: &Document) -> Result<(), String> {
        *self.stores.lock() += 1;
        self.docs.lock().insert(document.doc_id.clone(), document.clone());
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OrchestratorConfig {
    pub max_attempts: u32,
    /// Pause before a failed subtask is re-enqueued.
    pub retry_backoff: Duration,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self { max_attempts: DEFAULT_MAX_ATTEMPTS, retry_backoff: Duration::ZERO }
    }
}

struct TaskEntry {
    record: TaskRecord,
    doc_id: String,
    title: String,
    routed: HashMap<usize, PageSource>,
    segmented: HashMap<usize, StageResult>,
    join_guard: Arc<Mutex<()>>,
}

pub struct Orchestrator {
    queue: Arc<dyn SubtaskQueue>,
    stages: Arc<dyn PageStages>,
    sink: Arc<dyn DocumentSink>,
    config: OrchestratorConfig,
    tasks: Mutex<HashMap<String, TaskEntry>>,
}

fn new_task_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

impl Orchestrator {
    pub fn new(
        queue: Arc<dyn SubtaskQueue>,
        stages: Arc<dyn PageStages>,
        sink: Arc<dyn DocumentSink>,
        config: OrchestratorConfig,
    ) -> Self {
        Self { queue, stages, sink, config, tasks: Mutex::new(HashMap::new()) }
    }

    /// FIFO queue and the bundled conversion stages.
    pub fn with_sink(sink: Arc<dyn DocumentSink>, config: OrchestratorConfig) -> Self {
        Self::new(Arc::new(FifoQueue::default()), Arc::new(ConversionStages::default()), sink, config)
    }

    /// Register a conversion task and fan out its page subtasks.
    ///
    /// Never fails: undecodable input yields a task that is already `Failed`.
    pub fn submit(&self, raw: &[u8], format: FormatHint) -> String {
        let task_id = new_task_id();
        let now = Utc::now();
        let mut record = TaskRecord {
            task_id: task_id.clone(),
            state: TaskState::Queued,
            submitted_at: now,
            finished_at: None,
            doc_id: None,
            error: None,
            subtasks_total: 0,
            subtasks_done: 0,
        };

        match conversion::parse_submission(raw, format) {
            Err(e) => {
                record.state = TaskState::Failed;
                record.error = Some(e.to_string());
                record.finished_at = Some(now);
                tracing::info!(task_id, error = %e, "submission rejected");
                self.tasks.lock().insert(task_id.clone(), TaskEntry::new(record, String::new(), String::new()));
            }
            Ok(submission) => {
                record.subtasks_total = submission.pages.len();
                let entry = TaskEntry::new(record, submission.doc_id, submission.title);
                self.tasks.lock().insert(task_id.clone(), entry);
                for page in submission.pages {
                    self.queue.push(Subtask {
                        task_id: task_id.clone(),
                        page_index: page.page_index,
                        stage: Stage::Route,
                        attempts: 0,
                        payload: page,
                    });
                }
            }
        }
        task_id
    }

    pub fn status(&self, task_id: &str) -> Result<TaskRecord, OrchestratorError> {
        self.tasks
            .lock()
            .get(task_id)
            .map(|t| t.record.clone())
            .ok_or_else(|| OrchestratorError::UnknownTask(task_id.to_string()))
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// Pop and process at most one subtask. Returns how many were popped.
    pub fn worker_step(&self) -> usize {
        let Some(mut subtask) = self.queue.pop() else {
            return 0;
        };

        {
            let mut tasks = self.tasks.lock();
            let Some(entry) = tasks.get_mut(&subtask.task_id) else {
                return 1;
            };
            if entry.record.state.is_terminal() {
                return 1;
            }
            entry.record.state = TaskState::Running;
        }

        let outcome = catch_unwind(AssertUnwindSafe(|| self.run_stage(&subtask)))
            .unwrap_or_else(|panic| Err(panic_message(panic)));

        match outcome {
            Ok(output) => {
                if self.record_output(&subtask, output) {
                    let task_id = subtask.task_id.clone();
                    if let Err(e) = self.join(&task_id) {
                        tracing::warn!(task_id, error = %e, "join failed");
                    }
                }
            }
            Err(error) => {
                subtask.attempts += 1;
                if subtask.attempts < self.config.max_attempts {
                    tracing::debug!(
                        task_id = subtask.task_id,
                        page = subtask.page_index,
                        attempts = subtask.attempts,
                        error,
                        "retrying subtask"
                    );
                    if !self.config.retry_backoff.is_zero() {
                        std::thread::sleep(self.config.retry_backoff);
                    }
                    self.queue.push(subtask);
                } else {
                    let message = format!(
                        "page {} {:?} stage failed after {} attempts: {error}",
                        subtask.page_index, subtask.stage, subtask.attempts
                    );
                    self.fail(&subtask.task_id, message);
                }
            }
        }
        1
    }

    fn run_stage(&self, subtask: &Subtask) -> Result<StageOutput, String> {
        match subtask.stage {
            Stage::Route => self.stages.route(&subtask.payload).map(StageOutput::Routed),
            Stage::Segment => {
                let result = self.stages.segment(&subtask.payload)?;
                if result.page_index != subtask.page_index {
                    return Err(format!(
                        "segment stage returned page {} for page {}",
                        result.page_index, subtask.page_index
                    ));
                }
                Ok(StageOutput::Segmented(result))
            }
        }
    }

    /// Store a stage result. Returns true when this write completed the task.
    fn record_output(&self, subtask: &Subtask, output: StageOutput) -> bool {
        let mut tasks = self.tasks.lock();
        let Some(entry) = tasks.get_mut(&subtask.task_id) else {
            return false;
        };
        if entry.record.state.is_terminal() {
            return false;
        }
        match output {
            StageOutput::Routed(page) => {
                let first = entry.routed.insert(subtask.page_index, page.clone()).is_none();
                if first {
                    self.queue.push(Subtask {
                        task_id: subtask.task_id.clone(),
                        page_index: subtask.page_index,
                        stage: Stage::Segment,
                        attempts: 0,
                        payload: page,
                    });
                }
                false
            }
            StageOutput::Segmented(result) => {
                let first = entry.segmented.insert(subtask.page_index, result).is_none();
                if first {
                    entry.record.subtasks_done += 1;
                }
                first && entry.record.subtasks_done == entry.record.subtasks_total
            }
        }
    }

    fn fail(&self, task_id: &str, error: String) {
        {
            let mut tasks = self.tasks.lock();
            if let Some(entry) = tasks.get_mut(task_id) {
                if entry.record.state.is_terminal() {
                    return;
                }
                tracing::info!(task_id, error, "task failed");
                entry.record.state = TaskState::Failed;
                entry.record.error = Some(error);
                entry.record.finished_at = Some(Utc::now());
            }
        }
        self.queue.discard_task(task_id);
    }

    /// Assemble and store the document of a fully processed task.
    ///
    /// Idempotent: once the task is `Done`, later calls return the same id
    /// without storing again.
    pub fn join(&self, task_id: &str) -> Result<String, OrchestratorError> {
        let guard = {
            let tasks = self.tasks.lock();
            let entry = tasks.get(task_id).ok_or_else(|| OrchestratorError::UnknownTask(task_id.to_string()))?;
            Arc::clone(&entry.join_guard)
        };
        let _held = guard.lock();

        let (results, page_count, doc_id, title) = {
            let tasks = self.tasks.lock();
            let entry = &tasks[task_id];
            match entry.record.state {
                TaskState::Done => return Ok(entry.doc_id.clone()),
                TaskState::Failed => {
                    return Err(OrchestratorError::TaskFailed {
                        task_id: task_id.to_string(),
                        error: entry.record.error.clone().unwrap_or_default(),
                    })
                }
                _ if entry.record.subtasks_done < entry.record.subtasks_total => {
                    return Err(OrchestratorError::TaskNotComplete(task_id.to_string()))
                }
                _ => {}
            }
            (
                entry.segmented.values().cloned().collect::<Vec<_>>(),
                entry.record.subtasks_total,
                entry.doc_id.clone(),
                entry.title.clone(),
            )
        };

        let stored = conversion::assemble(results, page_count, &doc_id, &title)
            .map_err(|e| e.to_string())
            .and_then(|doc| self.sink.store(&doc));

        match stored {
            Ok(()) => {
                let mut tasks = self.tasks.lock();
                let entry = tasks.get_mut(task_id).expect("task exists");
                entry.record.state = TaskState::Done;
                entry.record.doc_id = Some(doc_id.clone());
                entry.record.finished_at = Some(Utc::now());
                tracing::info!(task_id, doc_id, "task done");
                Ok(doc_id)
            }
            Err(error) => {
                self.fail(task_id, error.clone());
                Err(OrchestratorError::TaskFailed { task_id: task_id.to_string(), error })
            }
        }
    }

    /// Step until the queue is empty. Returns the number of subtasks popped.
    pub fn drain(&self) -> usize {
        let mut total = 0;
        loop {
            let n = self.worker_step();
            if n == 0 {
                return total;
            }
            total += n;
        }
    }

    /// Step until `task_id` reaches a terminal state or the queue runs dry.
    pub fn run_to_completion(&self, task_id: &str) -> Result<TaskRecord, OrchestratorError> {
        loop {
            let record = self.status(task_id)?;
            if record.state.is_terminal() || self.worker_step() == 0 {
                return self.status(task_id);
            }
        }
    }

    /// Worker loop for a dedicated thread; polls while the queue is empty.
    pub fn run_worker(&self, stop: &AtomicBool, idle_poll: Duration) {
        while !stop.load(Ordering::Relaxed) {
            if self.worker_step() == 0 {
                std::thread::sleep(idle_poll);
            }
        }
    }

    /// Spawn `n` worker threads. Set `stop` to end them.
    pub fn spawn_workers(
        self: &Arc<Self>,
        n: usize,
        stop: Arc<AtomicBool>,
        idle_poll: Duration,
    ) -> Vec<std::thread::JoinHandle<()>> {
        (0..n)
            .map(|i| {
                let this = Arc::clone(self);
                let stop = Arc::clone(&stop);
                std::thread::Builder::new()
                    .name(format!("docqa-worker-{i}"))
                    .spawn(move || this.run_worker(&stop, idle_poll))
                    .expect("spawn worker thread")
            })
            .collect()
    }
}

enum StageOutput {
    Routed(PageSource),
    Segmented(StageResult),
}

impl TaskEntry {
    fn new(record: TaskRecord, doc_id: String, title: String) -> Self {
        Self {
            record,
            doc_id,
            title,
            routed: HashMap::new(),
            segmented: HashMap::new(),
            join_guard: Arc::new(Mutex::new(())),
        }
    }
}

fn panic_message(panic: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        format!("stage panicked: {s}")
    } else if let Some(s) = panic.downcast_ref::<String>() {
        format!("stage panicked: {s}")
    } else {
        "stage panicked".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    fn pages_json(n: usize) -> Vec<u8> {
        let pages: Vec<_> = (0..n)
            .map(|i| serde_json::json!({"page_index": i, "source_kind": "programmatic", "content": format!("# Page {i}\n\nBody {i}.")}))
            .collect();
        serde_json::to_vec(&serde_json::json!({"doc_id": "demo", "title": "Demo", "pages": pages})).unwrap()
    }

    fn orchestrator() -> (Orchestrator, Arc<MemorySink>) {
        let sink = Arc::new(MemorySink::default());
        (Orchestrator::with_sink(sink.clone(), OrchestratorConfig::default()), sink)
    }

    #[test]
    fn submit_fans_out_one_subtask_per_page() {
        let (orch, _) = orchestrator();
        let id = orch.submit(&pages_json(3), FormatHint::PagesJson);
        let rec = orch.status(&id).unwrap();
        assert_eq!(rec.subtasks_total, 3);
        assert_eq!(rec.state, TaskState::Queued);
        assert_eq!(orch.queue_len(), 3);
        assert_eq!(id.len(), 32);
        assert!(id.chars().all(|c| c.is_ascii_hexdigit()));
    }

    #[test]
    fn empty_input_fails_immediately() {
        let (orch, _) = orchestrator();
        let id = orch.submit(b"", FormatHint::PlainText);
        let rec = orch.status(&id).unwrap();
        assert_eq!(rec.state, TaskState::Failed);
        assert_eq!(rec.error.as_deref(), Some("no pages"));
        assert!(rec.finished_at.is_some());
    }

    #[test]
    fn same_bytes_get_distinct_task_ids() {
        let (orch, _) = orchestrator();
        let a = orch.submit(&pages_json(1), FormatHint::PagesJson);
        let b = orch.submit(&pages_json(1), FormatHint::PagesJson);
        assert_ne!(a, b);
    }

    #[test]
    fn unknown_task() {
        let (orch, _) = orchestrator();
        assert_eq!(orch.status("nope"), Err(OrchestratorError::UnknownTask("nope".into())));
    }

    #[test]
    fn steps_and_completion() {
        let (orch, sink) = orchestrator();
        assert_eq!(orch.worker_step(), 0);
        let id = orch.submit(&pages_json(2), FormatHint::PagesJson);
        assert_eq!(orch.worker_step(), 1);
        assert_eq!(orch.status(&id).unwrap().state, TaskState::Running);
        assert!(matches!(orch.join(&id), Err(OrchestratorError::TaskNotComplete(_))));

        let rec = orch.run_to_completion(&id).unwrap();
        assert_eq!(rec.state, TaskState::Done);
        assert_eq!(rec.doc_id.as_deref(), Some("demo"));
        assert_eq!(rec.subtasks_done, 2);
        assert_eq!(sink.get("demo").unwrap().blocks.len(), 4);

        assert_eq!(orch.join(&id).unwrap(), "demo");
        assert_eq!(sink.store_count(), 1);
        assert_eq!(orch.status(&id).unwrap(), rec);
    }

    struct FailingSegment {
        calls: AtomicUsize,
    }

    impl PageStages for FailingSegment {
        fn route(&self, page: &PageSource) -> Result<PageSource, String> {
            Ok(page.clone())
        }
        fn segment(&self, page: &PageSource) -> Result<StageResult, String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if page.page_index == 1 {
                Err("layout model crashed".into())
            } else {
                conversion::segment_layout(page).map_err(|e| e.to_string())
            }
        }
    }

    #[test]
    fn retries_then_fails_the_task() {
        let sink = Arc::new(MemorySink::default());
        let stages = Arc::new(FailingSegment { calls: AtomicUsize::new(0) });
        let orch = Orchestrator::new(
            Arc::new(FifoQueue::default()),
            stages.clone(),
            sink.clone(),
            OrchestratorConfig::default(),
        );
        let id = orch.submit(&pages_json(4), FormatHint::PagesJson);
        orch.drain();
        let rec = orch.status(&id).unwrap();
        assert_eq!(rec.state, TaskState::Failed);
        assert!(rec.error.unwrap().contains("after 3 attempts"));
        assert!(rec.doc_id.is_none());
        assert_eq!(sink.store_count(), 0);
        assert_eq!(orch.queue_len(), 0);
        assert!(matches!(orch.join(&id), Err(OrchestratorError::TaskFailed { .. })));
    }

    struct PanickingRoute;

    impl PageStages for PanickingRoute {
        fn route(&self, _: &PageSource) -> Result<PageSource, String> {
            panic!("ocr segfault")
        }
        fn segment(&self, page: &PageSource) -> Result<StageResult, String> {
            conversion::segment_layout(page).map_err(|e| e.to_string())
        }
    }

    #[test]
    fn panicking_stage_counts_as_failure() {
        let sink = Arc::new(MemorySink::default());
        let orch = Orchestrator::new(
            Arc::new(FifoQueue::default()),
            Arc::new(PanickingRoute),
            sink,
            OrchestratorConfig::default(),
        );
        let id = orch.submit(&pages_json(1), FormatHint::PagesJson);
        // Silence the default hook's backtrace noise for the expected panics.
        let hook = std::panic::take_hook();
        std::panic::set_hook(Box::new(|_| {}));
        let steps = orch.drain();
        std::panic::set_hook(hook);
        assert_eq!(steps, 3);
        let rec = orch.status(&id).unwrap();
        assert_eq!(rec.state, TaskState::Failed);
        assert!(rec.error.unwrap().contains("ocr segfault"));
    }

    #[test]
    fn missing_page_fails_at_join() {
        let (orch, _) = orchestrator();
        let raw = br#"{"doc_id":"gap","pages":[
            {"page_index":0,"source_kind":"programmatic","content":"a"},
            {"page_index":2,"source_kind":"programmatic","content":"c"}]}"#;
        let id = orch.submit(raw, FormatHint::PagesJson);
        let rec = orch.run_to_completion(&id).unwrap();
        assert_eq!(rec.state, TaskState::Failed);
        assert_eq!(rec.error.as_deref(), Some("missing page 1"));
    }

    #[test]
    fn task_record_json_uses_lowercase_states() {
        let (orch, _) = orchestrator();
        let id = orch.submit(&pages_json(1), FormatHint::PagesJson);
        let json = serde_json::to_value(orch.status(&id).unwrap()).unwrap();
        assert_eq!(json["state"], "queued");
        assert_eq!(json["subtasks_total"], 1);
    }
}
