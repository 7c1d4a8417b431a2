//! Whole-map and whole-head attention dropout decisions.

use crate::error::{MafError, Result};
use crate::rng::Rng;

/// Forward-pass mode. Dropout is active only in [`Mode::Train`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Decides which of `n` candidates (attention maps or heads) to zero.
///
/// In training, one Bernoulli(`p`) draw decides whether anything is dropped
/// and, if so, a second uniform draw picks the index. At most one candidate
/// is dropped. Eval mode never drops and never touches `rng`.
pub fn draw_drop(n: usize, p: f64, rng: &mut Rng, mode: Mode) -> Result<Option<usize>> {
    if n == 0 {
        return Err(MafError::Contract("attention drop over zero candidates".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(MafError::Contract(format!("drop probability {p} outside [0, 1]")));
    }
    match mode {
        Mode::Eval => Ok(None),
        Mode::Train => Ok(rng.bernoulli(p).then(|| rng.below(n))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_never_drops() {
        let mut rng = Rng::new(3);
        for _ in 0..100 {
            assert_eq!(draw_drop(3, 1.0, &mut rng, Mode::Eval).unwrap(), None);
        }
    }

    #[test]
    fn certain_drop_always_picks_an_index() {
        let mut rng = Rng::new(3);
        for _ in 0..100 {
            let d = draw_drop(3, 1.0, &mut rng, Mode::Train).unwrap();
            assert!(matches!(d, Some(0..=2)));
        }
    }

    #[test]
    fn rejects_empty_and_bad_probability() {
        let mut rng = Rng::new(0);
        assert!(draw_drop(0, 0.5, &mut rng, Mode::Train).is_err());
        assert!(draw_drop(2, 1.5, &mut rng, Mode::Train).is_err());
    }
}
