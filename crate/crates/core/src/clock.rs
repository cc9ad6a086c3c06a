use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Deterministic clock: every reading advances time by `step`.
#[derive(Debug)]
pub struct ManualClock {
    current: Mutex<DateTime<Utc>>,
    step: Duration,
}

impl ManualClock {
    pub fn new(start: DateTime<Utc>, step: Duration) -> Self {
        ManualClock {
            current: Mutex::new(start),
            step,
        }
    }

    /// Starts at 2016-04-11T00:00:00Z and ticks one millisecond per reading.
    pub fn ticking() -> Self {
        let start = DateTime::parse_from_rfc3339("2016-04-11T00:00:00Z")
            .expect("valid timestamp")
            .with_timezone(&Utc);
        Self::new(start, Duration::milliseconds(1))
    }

    pub fn advance(&self, by: Duration) {
        *self.current.lock() += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        let mut c = self.current.lock();
        let t = *c;
        *c += self.step;
        t
    }
}
