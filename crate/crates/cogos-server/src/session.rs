//! Live interactive sessions: one built kernel session per operator
//! connection, with a seq-numbered event log that clients long-poll.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::pin::pin;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use cogos_core::api::{SessionEvent, SessionEventBody};
use cogos_core::config::{ConfigError, RunConfig, Session, TaskAssignment};
use cogos_core::orchestrator::RunEvent;
use cogos_core::transcript::Transcript;
use tokio::sync::mpsc;
use tokio::sync::Notify;

pub struct LiveSession {
    pub id: String,
    pub session: Arc<Session>,
    events: Mutex<Vec<SessionEvent>>,
    notify: Notify,
    busy_robots: Mutex<BTreeSet<String>>,
    active_tasks: AtomicUsize,
    completed: Mutex<Vec<Transcript>>,
}

impl LiveSession {
    /// Builds the kernel session with the operator console attached; robot
    /// LISTENs on an empty mailbox will surface as input-request events.
    pub fn build(id: String, config: &RunConfig) -> Result<Arc<LiveSession>, ConfigError> {
        let (event_tx, mut event_rx) = mpsc::unbounded_channel::<RunEvent>();
        let session = Arc::new(Session::build(config, Some(event_tx))?);
        let mut input_requests = session.bus.attach_console();

        let live = Arc::new(LiveSession {
            id,
            session,
            events: Mutex::new(Vec::new()),
            notify: Notify::new(),
            busy_robots: Mutex::new(BTreeSet::new()),
            active_tasks: AtomicUsize::new(0),
            completed: Mutex::new(Vec::new()),
        });

        // Pump orchestrator events into the session log.
        let pump = live.clone();
        tokio::spawn(async move {
            while let Some(event) = event_rx.recv().await {
                let body = match event {
                    RunEvent::Step { robot_id, entry } => SessionEventBody::Step {
                        robot_id,
                        index: entry.index,
                        step: entry.step_text,
                        status: entry.result.status,
                        payload: entry.result.payload,
                        module: entry.result.origin_module,
                    },
                    RunEvent::Done { robot_id, outcome } => {
                        SessionEventBody::TaskDone { robot_id, outcome }
                    }
                };
                pump.push(body);
            }
        });

        // Pump console input requests.
        let pump = live.clone();
        tokio::spawn(async move {
            while let Some(request) = input_requests.recv().await {
                pump.push(SessionEventBody::InputRequested {
                    robot_id: request.robot_id,
                });
            }
        });

        Ok(live)
    }

    fn push(&self, body: SessionEventBody) {
        let mut events = self.events.lock().unwrap();
        let seq = events.len() as u64;
        events.push(SessionEvent { seq, body });
        drop(events);
        self.notify.notify_waiters();
    }

    pub fn busy(&self) -> bool {
        self.active_tasks.load(Ordering::SeqCst) > 0
    }

    /// Schedules a task: the addressed robot plus standing-task robots.
    /// Robots already mid-task are rejected.
    pub fn submit(
        self: &Arc<Self>,
        task: &str,
        robot: Option<&str>,
    ) -> Result<Vec<TaskAssignment>, ConfigError> {
        let assignments = self.session.assignments(task, robot)?;
        {
            let mut busy = self.busy_robots.lock().unwrap();
            for assignment in &assignments {
                if busy.contains(&assignment.robot_id) {
                    return Err(ConfigError::Invalid(format!(
                        "robot `{}` is still running a task",
                        assignment.robot_id
                    )));
                }
            }
            for assignment in &assignments {
                busy.insert(assignment.robot_id.clone());
            }
        }
        for assignment in &assignments {
            let live = self.clone();
            let assignment = assignment.clone();
            self.active_tasks.fetch_add(1, Ordering::SeqCst);
            tokio::spawn(async move {
                let index = live
                    .session
                    .robots
                    .iter()
                    .position(|r| r.profile.robot_id == assignment.robot_id)
                    .expect("assignment references a configured robot");
                let transcript = live.session.robots[index]
                    .orchestrator
                    .run(&assignment.task)
                    .await;
                live.completed.lock().unwrap().push(transcript);
                live.busy_robots.lock().unwrap().remove(&assignment.robot_id);
                live.active_tasks.fetch_sub(1, Ordering::SeqCst);
                live.notify.notify_waiters();
            });
        }
        Ok(assignments)
    }

    /// Events after the cursor, waiting up to `wait` for news.
    pub async fn events_after(&self, after: u64, wait: Duration) -> (Vec<SessionEvent>, u64, bool) {
        let deadline = tokio::time::Instant::now() + wait;
        loop {
            let mut notified = pin!(self.notify.notified());
            notified.as_mut().enable();
            {
                let events = self.events.lock().unwrap();
                if (events.len() as u64) > after {
                    let slice: Vec<SessionEvent> =
                        events.iter().skip(after as usize).cloned().collect();
                    let next = events.len() as u64;
                    return (slice, next, self.busy());
                }
            }
            if tokio::time::timeout_at(deadline, notified).await.is_err() {
                let events = self.events.lock().unwrap();
                return (Vec::new(), events.len() as u64, self.busy());
            }
        }
    }

    pub fn send_input(&self, text: &str) {
        // Operator speech is globally audible so a robot anywhere can
        // receive its instruction.
        self.session.bus.say("operator", text, None);
    }

    /// Writes completed transcripts and the full event log to the
    /// config's output directory. Returns the written paths.
    pub fn save(&self) -> std::io::Result<Vec<PathBuf>> {
        let dir = self.session.config.output.dir.join(format!("session_{}", self.id));
        std::fs::create_dir_all(&dir)?;
        let mut saved = Vec::new();

        let completed = self.completed.lock().unwrap();
        for (i, transcript) in completed.iter().enumerate() {
            let path = dir.join(format!("task_{:02}_{}.transcript.jsonl", i, transcript.robot_id));
            transcript
                .write_jsonl(&path)
                .map_err(|e| std::io::Error::other(e.to_string()))?;
            saved.push(path);
        }

        let log_path = dir.join("session_log.jsonl");
        let mut log = String::new();
        log.push_str(
            &serde_json::to_string(&serde_json::json!({
                "type": "session",
                "session_id": self.id,
            }))
            .unwrap(),
        );
        log.push('\n');
        for event in self.events.lock().unwrap().iter() {
            log.push_str(&serde_json::to_string(event).unwrap());
            log.push('\n');
        }
        std::fs::write(&log_path, log)?;
        saved.push(log_path);
        Ok(saved)
    }
}
