use cdu::config::ScenarioConfig;
use cdu::digits::load_digits;
use cdu::harness::build_digits;
use cdu_core::autoencoder::Autoencoder;
use cdu_core::driftmon::MonitorState;

#[test]
fn monitor_is_quiet_on_clean_digits_and_fires_on_blanked_ones() {
    let cfg = ScenarioConfig::digits();
    let data = load_digits().unwrap();
    let (mut clean, mut alarms) = (0, 0);
    for fold in 0..3 {
        let s = build_digits(&cfg, &data, 10, fold).unwrap();
        let train = s.stream.features.slice_rows(s.windows.train.clone());
        let split = train.rows() * 4 / 5;
        let (ae, _) = Autoencoder::train(&train.slice_rows(0..split), &cfg.autoencoder, fold as u64).unwrap();
        let mut state = MonitorState::calibrate(&ae, &train.slice_rows(split..train.rows()), 0.99, 0.1).unwrap();
        let mut fired = None;
        for t in s.windows.pre_eval.start..s.stream.len() {
            let (next, v) = state.observe(&ae, s.stream.features.row(t)).unwrap();
            state = next;
            if t < s.onset {
                clean += 1;
                alarms += v.drifted as usize;
            } else if v.drifted {
                fired = Some(t);
                break;
            }
        }
        let at = fired.expect("monitor never fired");
        assert!(
            at < s.onset + 50,
            "fold {fold}: fired {} samples after onset",
            at - s.onset
        );
    }
    assert!(alarms as f64 <= 0.02 * clean as f64, "{alarms} false alarms in {clean}");
}
