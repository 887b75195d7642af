//! Traces a shifting clip through its flow: novel-region masks for three
//! references, the rank-6 correspondence mask, and its token-level pooling.

use flowstyle::flow::{coverage, dilate, flow_mask, reference_masks, FlowFieldSequence, PoolToTokens, TokenPooling};

fn main() -> flowstyle::Result<()> {
    // content slides one pixel right per frame
    let flows = FlowFieldSequence::uniform(9, 6, 8, 0.0, 1.0)?;
    let refs = [0, 3, 7];
    let masks = reference_masks(&flows, &refs)?;
    for (f, m) in refs.iter().zip(masks.masks()) {
        println!("reference at frame {f}: {} novel pixels", m.count());
        for y in 0..m.height() {
            let row: String = (0..m.width()).map(|x| if m.get(y, x) { '#' } else { '.' }).collect();
            println!("    {row}");
        }
    }
    let seen = coverage(&flows, &refs, 8)?;
    println!("frame 8 pixels reached from the references: {}/{}", seen.count(), 6 * 8);

    let m = flow_mask(&flows)?;
    let grown = dilate(&m, 1);
    println!("flow mask: {} correspondences, {} after dilation by 1", m.len(), grown.len());
    let pooling = TokenPooling::for_video((2, 2), 9, 4, 3)?;
    let tokens = grown.pool_to_tokens(&pooling)?;
    println!(
        "token mask over maps {:?}: {} entries on a {}x{} token grid",
        pooling.sampled().indices(),
        tokens.len(),
        tokens.height(),
        tokens.width()
    );
    Ok(())
}
