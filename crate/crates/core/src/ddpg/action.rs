use crate::env::ScheduleAction;

/// Maps a continuous actor output in `[0, M]^N` to a feasible schedule.
///
/// Each device prefers channel `round(raw_n)`. A channel wanted by several
/// devices goes to the one whose raw value is closest to the channel number,
/// ties to the lowest index; the others fall back to idle. Every channel that
/// is still free is then handed to the idle device with the largest raw
/// value, ties to the lowest index.
pub fn project_action(raw: &[f64], num_channels: usize) -> ScheduleAction {
    let n = raw.len();
    assert!(num_channels <= n, "more channels than devices");
    let m_max = num_channels as f64;
    let pref: Vec<usize> = raw
        .iter()
        .map(|&x| {
            let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, m_max) };
            x.round() as usize
        })
        .collect();
    let mut action = vec![0usize; n];
    let mut taken = vec![false; num_channels + 1];
    for m in 1..=num_channels {
        let target = m as f64;
        let mut best: Option<usize> = None;
        for d in (0..n).filter(|&d| pref[d] == m) {
            let better = match best {
                None => true,
                Some(b) => (raw[d] - target).abs() < (raw[b] - target).abs(),
            };
            if better {
                best = Some(d);
            }
        }
        if let Some(d) = best {
            action[d] = m;
            taken[m] = true;
        }
    }
    for m in 1..=num_channels {
        if taken[m] {
            continue;
        }
        let mut best: Option<usize> = None;
        for d in (0..n).filter(|&d| action[d] == 0) {
            let better = match best {
                None => true,
                Some(b) => raw[d] > raw[b],
            };
            if better {
                best = Some(d);
            }
        }
        let d = best.expect("at least as many devices as channels");
        action[d] = m;
    }
    ScheduleAction(action)
}

/// `a_n / M` per device.
pub fn encode_action(action: &ScheduleAction, num_channels: usize) -> Vec<f64> {
    let m = num_channels as f64;
    action.0.iter().map(|&a| a as f64 / m).collect()
}

/// Inverse of [`encode_action`] by rounding `x * M`.
pub fn decode_action(encoded: &[f64], num_channels: usize) -> ScheduleAction {
    let m = num_channels as f64;
    ScheduleAction(encoded.iter().map(|&x| (x * m).round().max(0.0) as usize).collect())
}
