use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::Args;
use serde::Serialize;
use trapline_service::alerts::{AlertDispatcher, ChannelSink};
use trapline_service::inference::{backend_health, DetectionBackend, Health, HttpBackend, MockBackend};
use trapline_service::ingest::{
    deliver_messages, fetch_with_backoff, Backoff, DirectoryWatcher, ImapMailbox, Mailbox, MailboxError,
};
use trapline_service::pipeline::{Pipeline, PipelineSummary};
use trapline_service::store::{SpeciesCounts, Store, StoreError, TimeRange};

use crate::{load_service_config, CliError, CommandResult};

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// One pass with an in-memory store and the mock backend; nothing is persisted.
    #[arg(long)]
    pub dry_run: bool,
    /// Stop after a single poll.
    #[arg(long)]
    pub once: bool,
    /// Drop directory to watch (overrides the configuration).
    #[arg(long, value_name = "DIR")]
    pub drop_dir: Option<PathBuf>,
    /// Mock backend fixture directory (overrides the configuration).
    #[arg(long, value_name = "DIR")]
    pub mock_fixtures: Option<PathBuf>,
    /// Store file (overrides the configuration).
    #[arg(long, value_name = "FILE")]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize)]
struct ServeSummary {
    polls: u32,
    pipeline: PipelineSummary,
    redriven: PipelineSummary,
    skipped_files: usize,
    quarantined_messages: usize,
    parked_remaining: u64,
    counts: SpeciesCounts,
}

pub fn run(args: ServeArgs, config: Option<&Path>) -> Result<CommandResult, CliError> {
    let mut cfg = load_service_config(config)?;
    if let Some(d) = args.drop_dir {
        cfg.ingest.drop_dir = Some(d);
    }
    if let Some(m) = args.mock_fixtures {
        cfg.mock = Some(trapline_service::config::MockSection { fixtures: m });
    }
    if let Some(s) = args.store {
        cfg.store.path = s;
    }
    let once = args.once || args.dry_run;
    if cfg.ingest.drop_dir.is_none() && cfg.mailbox.is_none() {
        return Err(CliError::Failed("nothing to watch: set ingest.drop_dir or a [mailbox]".into()));
    }

    let backend: Arc<dyn DetectionBackend> = match &cfg.mock {
        Some(m) => Arc::new(MockBackend::from_dir(&m.fixtures)?),
        None if args.dry_run => {
            return Err(CliError::Failed("--dry-run needs mock fixtures (--mock-fixtures or [mock])".into()))
        }
        None => Arc::new(HttpBackend::new(&cfg.backend)),
    };
    let health = backend_health(backend.as_ref(), &cfg.backend);
    tracing::info!(stage = "classify", status = ?health.status, latency_ms = health.latency_ms, "backend health");
    if health.status == Health::Down {
        tracing::warn!(stage = "classify", error = ?health.error, "backend is down; events will be parked");
    }

    let store = Arc::new(if args.dry_run {
        Store::in_memory(cfg.backend.confidence_floor)?
    } else {
        Store::open(&cfg.store.path, cfg.backend.confidence_floor)?
    });
    for camera in &cfg.cameras {
        match store.register_camera(camera) {
            Ok(()) | Err(StoreError::DuplicateCamera(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }

    let mut pipeline = Pipeline::new(store.clone(), backend, cfg.backend.clone(), cfg.ingest.queue_capacity);
    if !cfg.alerts.is_empty() {
        let dispatcher = AlertDispatcher::start(Arc::new(ChannelSink::default()), Some(store.clone()));
        pipeline = pipeline.with_alerts(cfg.alerts.clone(), dispatcher);
    }

    let mut watcher = cfg.ingest.drop_dir.clone().map(DirectoryWatcher::new);
    let mut mailbox: Option<Box<dyn Mailbox>> = cfg.mailbox.clone().map(|m| Box::new(ImapMailbox::new(m)) as Box<dyn Mailbox>);
    let mut backoff = Backoff::default();
    let mut summary = ServeSummary::default();

    loop {
        summary.polls += 1;
        let mut failure: Option<CliError> = None;
        let (_, s) = pipeline.run(|queue| {
            if let Some(w) = watcher.as_mut() {
                match w.scan() {
                    Ok(scan) => {
                        summary.skipped_files += scan.skipped.len();
                        for e in scan.events {
                            if queue.enqueue(e).is_err() {
                                return;
                            }
                        }
                    }
                    Err(e) => {
                        failure = Some(CliError::Io { path: w.root().to_path_buf(), source: e });
                        return;
                    }
                }
            }
            if let Some(mb) = mailbox.as_mut() {
                let attempts = if once { Some(3) } else { None };
                match fetch_with_backoff(mb.as_mut(), &mut backoff, attempts, &mut std::thread::sleep) {
                    Ok(messages) => {
                        let report = deliver_messages(mb.as_mut(), messages, queue);
                        summary.quarantined_messages += report.quarantined.len();
                    }
                    Err(e @ MailboxError::Auth(_)) => failure = Some(CliError::Failed(e.to_string())),
                    Err(e) => tracing::warn!(stage = "poller", error = %e, "mailbox unavailable this poll"),
                }
            }
        });
        summary.pipeline.merge(&s);
        if let Some(e) = failure {
            return Err(e);
        }
        let r = pipeline.redrive()?;
        summary.redriven.merge(&r);
        if once {
            break;
        }
        std::thread::sleep(Duration::from_secs(cfg.ingest.poll_interval_s));
    }
    drop(pipeline);

    summary.parked_remaining = store.parked_count()?;
    summary.counts = store.species_counts(&TimeRange::all(), None)?;
    let text = serde_json::to_string_pretty(&summary).expect("json") + "\n";
    Ok(CommandResult::ok(text))
}
