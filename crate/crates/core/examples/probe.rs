use rff_core::impair::{apply_impairments, ImpairmentState};
use rff_core::metrology::{measure, ImpairmentVector};
use rff_core::waveform::{prbs_bits, synth_frame, FrameSpec};

fn main() {
    let spec = FrameSpec::ofdm(prbs_bits(192 * 40, 43), 1);
    let ideal = synth_frame(&spec).unwrap();
    for g in [1.02f64, 1.122, 1.5, 2.0] {
        let mut state = ImpairmentState::identity();
        state.gain_i = g;
        let rx = apply_impairments(&ideal, &state).unwrap();
        let v = match measure(&rx, &spec).unwrap() {
            ImpairmentVector::N(n) => n,
            _ => unreachable!(),
        };
        let want = 20.0 * g.log10();
        println!(
            "g={g}: want {want:.4} dB, measured {:.4} dB (err {:+.4}); quad {:+.4} evm {:.3}",
            v.gain_imb_db,
            v.gain_imb_db - want,
            v.quad_err_deg,
            v.evm_rms_pct
        );
    }
}
