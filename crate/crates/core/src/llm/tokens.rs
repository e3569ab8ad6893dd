/// Token estimate used for prompt budgeting.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Whitespace-and-punctuation segmentation.
///
/// Every maximal run of alphanumeric/underscore characters costs
/// `ceil(len / 4)` tokens, every other non-whitespace character costs one,
/// and the sum is scaled by `factor` (rounded up).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentCounter {
    pub factor: f64,
}

impl Default for SegmentCounter {
    fn default() -> Self {
        Self { factor: 1.0 }
    }
}

impl SegmentCounter {
    fn raw(text: &str) -> usize {
        let mut total = 0;
        let mut run = 0usize;
        for ch in text.chars() {
            if ch.is_alphanumeric() || ch == '_' {
                run += 1;
                continue;
            }
            total += run.div_ceil(4);
            run = 0;
            if !ch.is_whitespace() {
                total += 1;
            }
        }
        total + run.div_ceil(4)
    }
}

impl TokenCounter for SegmentCounter {
    fn count(&self, text: &str) -> usize {
        let raw = Self::raw(text);
        if raw == 0 {
            0
        } else {
            (raw as f64 * self.factor).ceil() as usize
        }
    }
}
