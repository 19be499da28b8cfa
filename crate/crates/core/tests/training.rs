use oampnet::detectors::{Detector, NetParams, OampConfig};
use oampnet::harness::{run_ber, DetectorInfo, SweepOptions};
use oampnet::model::{ChannelModel, SystemConfig};
use oampnet::training::{train, TrainConfig};

/// Desk-scale training at 8 dB, scored on the same 10^6 bits as the untrained network.
#[test]
fn desk_scale_training_beats_initialization() {
    let sys = SystemConfig::new(4, 4, 4, 8.0, 808).unwrap();
    let cfg = OampConfig::default();
    let ck = train(&sys, ChannelModel::Rayleigh, &TrainConfig::desk_scale(8.0, 808), &cfg).unwrap();
    assert!(ck.validation_history[ck.epoch] <= ck.validation_history[0]);
    let best_so_far: Vec<f64> = ck
        .validation_history
        .iter()
        .scan(f64::INFINITY, |m, &v| {
            *m = m.min(v);
            Some(*m)
        })
        .collect();
    assert!(best_so_far.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(best_so_far.last().copied(), Some(ck.validation_history[ck.epoch]));

    let opts = SweepOptions { min_errors: u64::MAX, max_bits: 1_000_000, timing: false };
    let ber = |params: NetParams| {
        let det = Detector::OampNet { params, config: cfg };
        run_ber(&det, DetectorInfo::of(&det, None), &sys, ChannelModel::Rayleigh, &[8.0], &opts).unwrap().points[0]
    };
    let trained = ber(ck.params().unwrap());
    let untrained = ber(NetParams::ones(10, false));
    assert_eq!(trained.bits, 1_000_000);
    assert!(trained.ber < untrained.ber, "trained {} vs untrained {}", trained.ber, untrained.ber);
}
