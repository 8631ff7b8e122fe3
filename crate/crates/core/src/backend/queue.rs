use std::sync::{Condvar, Mutex};

use crate::imaging::ImageBuffer;
use crate::prompt::SpecializedPrompt;

use super::{
    BackendDescriptor, BackendError, CaptureBundle, CaptureMode, GenerationResult, TokenSpan,
    VisionLanguageBackend,
};

/// Ticket lock: callers are admitted strictly in arrival order.
#[derive(Debug, Default)]
pub struct FifoGate {
    state: Mutex<Tickets>,
    turn: Condvar,
}

#[derive(Debug, Default)]
struct Tickets {
    next: u64,
    serving: u64,
}

pub struct FifoGuard<'a> {
    gate: &'a FifoGate,
}

impl FifoGate {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn acquire(&self) -> FifoGuard<'_> {
        let mut state = self.state.lock().expect("gate lock poisoned");
        let ticket = state.next;
        state.next += 1;
        while state.serving != ticket {
            state = self.turn.wait(state).expect("gate lock poisoned");
        }
        FifoGuard { gate: self }
    }

    /// Holders plus waiters.
    pub fn occupancy(&self) -> u64 {
        let state = self.state.lock().expect("gate lock poisoned");
        state.next - state.serving
    }
}

impl Drop for FifoGuard<'_> {
    fn drop(&mut self) {
        let mut state = self.gate.state.lock().expect("gate lock poisoned");
        state.serving += 1;
        self.gate.turn.notify_all();
    }
}

/// Serializes all generation and capture calls on one backend instance.
pub struct QueuedBackend<B> {
    inner: B,
    gate: FifoGate,
}

impl<B: VisionLanguageBackend> QueuedBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, gate: FifoGate::new() }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn gate(&self) -> &FifoGate {
        &self.gate
    }
}

impl<B: VisionLanguageBackend> VisionLanguageBackend for QueuedBackend<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn generate(&self, image: &ImageBuffer, prompt: &SpecializedPrompt) -> Result<GenerationResult, BackendError> {
        let _turn = self.gate.acquire();
        self.inner.generate(image, prompt)
    }

    fn capture(
        &self,
        image: &ImageBuffer,
        prompt: &SpecializedPrompt,
        gen: &GenerationResult,
        span: TokenSpan,
        mode: CaptureMode,
    ) -> Result<CaptureBundle, BackendError> {
        let _turn = self.gate.acquire();
        self.inner.capture(image, prompt, gen, span, mode)
    }
}
