//! Verbal channel between robots and users: SAY fan-out and blocking
//! LISTEN with timeout.
//!
//! Delivery is room-local by default (an utterance reaches every party at
//! the speaker's location except the speaker itself) with a global mode
//! for single-room setups and operator consoles. The listener set is
//! computed when SAY happens; moving afterwards neither gains nor loses
//! messages. LISTEN is the only blocking operation in the system.

use std::collections::{BTreeMap, VecDeque};
use std::pin::pin;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::mpsc;
use tokio::sync::Notify;

/// One spoken line, globally sequence-numbered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub seq: u64,
    pub speaker: String,
    pub text: String,
    /// Location the utterance was audible at; `None` means everywhere.
    pub audible_at: Option<String>,
}

/// Raised by the console hook when a robot is waiting for human input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRequest {
    pub robot_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ListenError {
    #[error("heard nothing")]
    Timeout,
    #[error("`{0}` is not registered on the bus")]
    Unregistered(String),
}

#[derive(Debug)]
struct Party {
    /// `None` = hears everything (console); robots carry their location.
    location: Option<String>,
    mailbox: VecDeque<Utterance>,
}

#[derive(Debug)]
struct BusState {
    seq: u64,
    parties: BTreeMap<String, Party>,
    console: Option<mpsc::UnboundedSender<InputRequest>>,
}

/// The cross-loop rendezvous point. Safe for concurrent say/listen from
/// independent robot loops.
#[derive(Debug)]
pub struct Bus {
    state: Mutex<BusState>,
    notify: Notify,
    global_audibility: bool,
}

impl Bus {
    pub fn new(global_audibility: bool) -> Bus {
        Bus {
            state: Mutex::new(BusState {
                seq: 0,
                parties: BTreeMap::new(),
                console: None,
            }),
            notify: Notify::new(),
            global_audibility,
        }
    }

    /// Registers a listening party. Robots pass their start location;
    /// `None` makes the party hear everything.
    pub fn register(&self, party_id: &str, location: Option<&str>) {
        let mut state = self.state.lock().unwrap();
        state.parties.insert(
            party_id.to_string(),
            Party {
                location: location.map(str::to_string),
                mailbox: VecDeque::new(),
            },
        );
    }

    /// Keeps a robot's audibility position in sync with the world.
    pub fn set_location(&self, party_id: &str, location: &str) {
        let mut state = self.state.lock().unwrap();
        if let Some(party) = state.parties.get_mut(party_id) {
            party.location = Some(location.to_string());
        }
    }

    /// Attaches the operator console: LISTEN on an empty mailbox will emit
    /// an [`InputRequest`] and wait for input instead of timing out.
    pub fn attach_console(&self) -> mpsc::UnboundedReceiver<InputRequest> {
        let (tx, rx) = mpsc::unbounded_channel();
        self.state.lock().unwrap().console = Some(tx);
        rx
    }

    pub fn console_attached(&self) -> bool {
        self.state.lock().unwrap().console.is_some()
    }

    /// Publishes an utterance to every co-located party except the speaker.
    /// Returns the sequence number. `location = None` speaks globally.
    pub fn say(&self, speaker: &str, text: &str, location: Option<&str>) -> u64 {
        let mut state = self.state.lock().unwrap();
        let seq = state.seq;
        state.seq += 1;
        let location = if self.global_audibility {
            None
        } else {
            location.map(str::to_string)
        };
        let utterance = Utterance {
            seq,
            speaker: speaker.to_string(),
            text: text.to_string(),
            audible_at: location.clone(),
        };
        for (id, party) in state.parties.iter_mut() {
            if id == speaker {
                continue; // no self-delivery
            }
            let audible = match (&location, &party.location) {
                (None, _) | (_, None) => true,
                (Some(at), Some(here)) => at == here,
            };
            if audible {
                party.mailbox.push_back(utterance.clone());
            }
        }
        drop(state);
        self.notify.notify_waiters();
        seq
    }

    /// Number of pending utterances for a party.
    pub fn pending(&self, party_id: &str) -> usize {
        self.state
            .lock()
            .unwrap()
            .parties
            .get(party_id)
            .map(|p| p.mailbox.len())
            .unwrap_or(0)
    }

    /// Blocks until the party's mailbox is non-empty or the timeout
    /// elapses. With a console attached, an empty mailbox raises an input
    /// request and waits for the operator instead of timing out.
    pub async fn listen(&self, party_id: &str, timeout: Duration) -> Result<Utterance, ListenError> {
        let deadline = tokio::time::Instant::now() + timeout;
        let mut input_requested = false;
        loop {
            let mut notified = pin!(self.notify.notified());
            // Register interest before checking the mailbox so a SAY
            // between the check and the await cannot be missed.
            notified.as_mut().enable();

            let console = {
                let mut state = self.state.lock().unwrap();
                let Some(party) = state.parties.get_mut(party_id) else {
                    return Err(ListenError::Unregistered(party_id.to_string()));
                };
                if let Some(utterance) = party.mailbox.pop_front() {
                    return Ok(utterance);
                }
                state.console.clone()
            };

            if let Some(console) = console {
                if !input_requested {
                    input_requested = true;
                    let _ = console.send(InputRequest {
                        robot_id: party_id.to_string(),
                    });
                }
                // Operator input has no deadline.
                notified.await;
            } else if tokio::time::timeout_at(deadline, notified).await.is_err() {
                return Err(ListenError::Timeout);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn room_bus() -> Bus {
        let bus = Bus::new(false);
        bus.register("dog", Some("table"));
        bus.register("arm", Some("table"));
        bus.register("far", Some("dock"));
        bus
    }

    #[tokio::test]
    async fn say_delivers_to_colocated_parties_only() {
        let bus = room_bus();
        bus.say("dog", "juice is needed", Some("table"));
        assert_eq!(bus.pending("arm"), 1);
        assert_eq!(bus.pending("dog"), 0, "no self-delivery");
        assert_eq!(bus.pending("far"), 0, "room-local audibility");
    }

    #[tokio::test]
    async fn say_with_no_listeners_is_fine() {
        let bus = Bus::new(false);
        bus.register("solo", Some("void"));
        let seq = bus.say("solo", "anyone?", Some("void"));
        assert_eq!(seq, 0);
    }

    #[tokio::test]
    async fn sequence_numbers_strictly_increase() {
        let bus = room_bus();
        let a = bus.say("dog", "one", Some("table"));
        let b = bus.say("dog", "two", Some("table"));
        assert!(b > a);
    }

    #[tokio::test]
    async fn listen_returns_pending_in_fifo_order() {
        let bus = room_bus();
        bus.say("dog", "first", Some("table"));
        bus.say("dog", "second", Some("table"));
        let a = bus.listen("arm", Duration::from_millis(50)).await.unwrap();
        let b = bus.listen("arm", Duration::from_millis(50)).await.unwrap();
        assert_eq!(a.text, "first");
        assert_eq!(b.text, "second");
        assert!(a.seq < b.seq);
        assert_eq!(bus.pending("arm"), 0);
    }

    #[tokio::test]
    async fn listen_times_out_when_nothing_is_said() {
        let bus = room_bus();
        let err = bus
            .listen("arm", Duration::from_millis(30))
            .await
            .unwrap_err();
        assert_eq!(err, ListenError::Timeout);
    }

    #[tokio::test]
    async fn listen_unblocks_on_later_say() {
        let bus = Arc::new(room_bus());
        let waiter = {
            let bus = bus.clone();
            tokio::spawn(async move { bus.listen("dog", Duration::from_secs(5)).await })
        };
        tokio::time::sleep(Duration::from_millis(20)).await;
        bus.say("arm", "delivery ready", Some("table"));
        let heard = waiter.await.unwrap().unwrap();
        assert_eq!(heard.text, "delivery ready");
        assert_eq!(heard.speaker, "arm");
    }

    #[tokio::test]
    async fn delivery_set_is_computed_at_say_time() {
        let bus = room_bus();
        bus.say("dog", "before the move", Some("table"));
        bus.set_location("arm", "dock");
        // Said at the table while the arm was still there: kept.
        assert_eq!(bus.pending("arm"), 1);
        bus.say("dog", "after the move", Some("table"));
        assert_eq!(bus.pending("arm"), 1, "not audible from the dock");
    }

    #[tokio::test]
    async fn global_mode_reaches_everyone() {
        let bus = Bus::new(true);
        bus.register("a", Some("x"));
        bus.register("b", Some("y"));
        bus.say("a", "hello all", Some("x"));
        assert_eq!(bus.pending("b"), 1);
    }

    #[tokio::test]
    async fn two_listeners_both_time_out() {
        let bus = Arc::new(room_bus());
        let t0 = tokio::time::Instant::now();
        let (a, b) = tokio::join!(
            bus.listen("dog", Duration::from_millis(40)),
            bus.listen("arm", Duration::from_millis(60)),
        );
        assert_eq!(a.unwrap_err(), ListenError::Timeout);
        assert_eq!(b.unwrap_err(), ListenError::Timeout);
        assert!(t0.elapsed() < Duration::from_secs(2));
    }

    #[tokio::test]
    async fn console_turns_empty_mailbox_into_input_request() {
        let bus = Arc::new(Bus::new(false));
        bus.register("dog", Some("table"));
        let mut requests = bus.attach_console();
        let waiter = {
            let bus = bus.clone();
            tokio::spawn(async move { bus.listen("dog", Duration::from_millis(10)).await })
        };
        let request = requests.recv().await.unwrap();
        assert_eq!(request.robot_id, "dog");
        // Well past the nominal timeout: the console keeps it waiting.
        tokio::time::sleep(Duration::from_millis(50)).await;
        assert!(!waiter.is_finished());
        bus.say("operator", "bring it to the dock", None);
        let heard = waiter.await.unwrap().unwrap();
        assert_eq!(heard.speaker, "operator");
        assert_eq!(heard.text, "bring it to the dock");
    }

    #[tokio::test]
    async fn listen_by_unregistered_party_errors() {
        let bus = Bus::new(false);
        let err = bus
            .listen("ghost", Duration::from_millis(5))
            .await
            .unwrap_err();
        assert!(matches!(err, ListenError::Unregistered(_)));
    }
}
