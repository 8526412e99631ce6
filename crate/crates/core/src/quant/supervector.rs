use crate::features::MelFrame;

/// Consecutive log mel frames concatenated into one vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Supervector {
    pub values: Vec<f64>,
    pub time_index: usize,
}

/// Groups frames `[t*stack, t*stack + stack)` into supervector `t`; a trailing
/// partial group is dropped.
pub fn stack_supervectors(frames: &[MelFrame], stack: usize) -> Vec<Supervector> {
    assert!(stack >= 1, "stack must be at least 1");
    frames
        .chunks_exact(stack)
        .enumerate()
        .map(|(t, group)| Supervector {
            values: group.iter().flat_map(|f| f.values.iter().copied()).collect(),
            time_index: t,
        })
        .collect()
}

/// Inverse of [`stack_supervectors`].
pub fn unstack_supervectors(svs: &[Supervector], stack: usize) -> Vec<MelFrame> {
    let mut out = Vec::with_capacity(svs.len() * stack);
    for sv in svs {
        let n_mels = sv.values.len() / stack;
        for chunk in sv.values.chunks_exact(n_mels) {
            out.push(MelFrame {
                values: chunk.to_vec(),
                frame_index: out.len(),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(n: usize, dim: usize) -> Vec<MelFrame> {
        (0..n)
            .map(|t| MelFrame {
                values: (0..dim).map(|i| (t * dim + i) as f64).collect(),
                frame_index: t,
            })
            .collect()
    }

    #[test]
    fn counts_and_truncation() {
        assert_eq!(stack_supervectors(&frames(10, 3), 2).len(), 5);
        assert_eq!(stack_supervectors(&frames(11, 3), 2).len(), 5);
        assert_eq!(stack_supervectors(&frames(0, 3), 2).len(), 0);
    }

    #[test]
    fn full_dimension() {
        let svs = stack_supervectors(&frames(4, 160), 2);
        assert!(svs.iter().all(|s| s.values.len() == 320));
    }

    #[test]
    fn unstack_inverts() {
        let f = frames(6, 4);
        let back = unstack_supervectors(&stack_supervectors(&f, 2), 2);
        assert_eq!(back, f);
    }
}
