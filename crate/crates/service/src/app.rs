//! Shared state: the library, the conversion orchestrator and the QA engine.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use docqa_core::encoder::{Encoder, HashBagEncoder};
use docqa_core::library::Library;
use docqa_core::orchestrator::{Orchestrator, OrchestratorConfig};
use docqa_core::passages::DEFAULT_MAX_CHUNK_CHARS;
use docqa_core::qa::{Moderator, QaEngine, Stopwords};

use crate::config::Config;

const IDLE_POLL: Duration = Duration::from_millis(5);

#[derive(Clone)]
pub struct App {
    pub library: Arc<Library>,
    pub orchestrator: Arc<Orchestrator>,
    pub qa: Arc<QaEngine>,
}

impl App {
    pub fn new(config: &Config) -> anyhow::Result<Self> {
        let encoder: Arc<dyn Encoder> = Arc::new(HashBagEncoder::new(config.embed_dim)?);
        let library = Arc::new(Library::open(&config.library, encoder.clone(), DEFAULT_MAX_CHUNK_CHARS)?);
        let orchestrator = Arc::new(Orchestrator::with_sink(
            library.clone(),
            OrchestratorConfig { retry_backoff: config.retry_backoff, ..OrchestratorConfig::default() },
        ));
        let stopwords = match &config.stopwords {
            Some(path) => Stopwords::from_file(path)
                .map_err(|e| anyhow::anyhow!("stopwords {}: {e}", path.display()))?,
            None => Stopwords::default(),
        };
        let moderator = match &config.wordlist {
            Some(path) => Moderator::from_file(path)?,
            None => Moderator::default(),
        };
        let qa = Arc::new(QaEngine::new(encoder, stopwords, moderator, config.generation())?);
        Ok(Self { library, orchestrator, qa })
    }

    /// Start `n` conversion workers; they stop when the handle drops.
    pub fn start_workers(&self, n: usize) -> Workers {
        let stop = Arc::new(AtomicBool::new(false));
        let handles = self.orchestrator.spawn_workers(n, stop.clone(), IDLE_POLL);
        Workers { stop, handles }
    }
}

pub struct Workers {
    stop: Arc<AtomicBool>,
    handles: Vec<JoinHandle<()>>,
}

impl Drop for Workers {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for handle in self.handles.drain(..) {
            let _ = handle.join();
        }
    }
}
