use std::fmt::Write as _;

use super::EpochLoss;

/// `epoch,ce,kl,total` rows.
pub fn encode_loss_trace(rows: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,ce,kl,total\n");
    for r in rows {
        let _ = writeln!(s, "{},{:e},{:e},{:e}", r.epoch, r.ce, r.kl, r.total);
    }
    s
}
