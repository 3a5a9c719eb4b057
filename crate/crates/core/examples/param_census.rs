//! Count MFMSA weights per branch over a small grid of widths and ratios.
//! The last point has a 36-channel branch with r = 16, so the hidden width
//! floors and that branch is reported against the closed form.

use madgnet::analysis::ParamReport;
use madgnet::mfmsa::MfmsaConfig;

fn main() -> madgnet::Result<()> {
    let base = MfmsaConfig { min_channels: 8, ..MfmsaConfig::default() };
    let points = [(64, 16, 0.5), (128, 16, 0.5), (64, 8, 0.5), (64, 16, 0.75)];
    let rep = ParamReport::sweep(&base, &points)?;
    print!("{}", rep.to_tsv());
    for v in rep.violations() {
        println!("violation: {v}");
    }
    Ok(())
}
