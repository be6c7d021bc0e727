/// Sliding anti-replay window over the last 64 sequence numbers.
///
/// Bit `i` of the bitmap records whether `highest - i` has been seen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReplayWindow {
    highest: u64,
    bitmap: u64,
}

pub const REPLAY_WINDOW_SIZE: u64 = 64;

impl ReplayWindow {
    pub fn new() -> Self {
        Self::default()
    }

    /// Highest sequence number accepted so far, 0 if none.
    pub fn highest(&self) -> u64 {
        self.highest
    }

    /// Would `seq` be accepted? Does not modify the window.
    pub fn check(&self, seq: u64) -> bool {
        if seq == 0 {
            return false;
        }
        if seq > self.highest {
            return true;
        }
        let back = self.highest - seq;
        back < REPLAY_WINDOW_SIZE && self.bitmap & (1 << back) == 0
    }

    /// Accepts and records `seq`, or rejects it leaving the window unchanged.
    pub fn update(&mut self, seq: u64) -> bool {
        if !self.check(seq) {
            return false;
        }
        if seq > self.highest {
            let shift = seq - self.highest;
            self.bitmap = if shift >= REPLAY_WINDOW_SIZE {
                0
            } else {
                self.bitmap << shift
            };
            self.bitmap |= 1;
            self.highest = seq;
        } else {
            self.bitmap |= 1 << (self.highest - seq);
        }
        true
    }
}
