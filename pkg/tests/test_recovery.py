import random

import pytest

import refscan
from lossyserve.errors import StaleRequest
from lossyserve.jpeg import parse_jpeg, plan_mcu_blocks, scan_mcu_boundaries
from lossyserve.protocol import build_packets, encode_packet
from lossyserve.recovery import (
    Outcome, ReassemblyState, compare_placements, drop_first_packets, finalize, recover_datagrams,
)


def pack(data, target=48, mtu=64, rid=3):
    img = parse_jpeg(data)
    plan = plan_mcu_blocks(img, scan_mcu_boundaries(img), target_block_bytes=target)
    return img, plan, build_packets(img, plan, rid, mtu)


def assert_decodes(stock, out, img, name=""):
    p = stock.probe(out)
    assert p.clean, (name, p.message)
    assert (p.width, p.height) == (img.width, img.height), name
    assert refscan.check_scan(out) == img.mcu_count_expected, name


def recoverable(fixture_corpus):
    return [(n, d) for n, d, _ in fixture_corpus if pack(d)[1].recoverable]


def test_zero_loss_identity_any_order(fixture_corpus):
    rng = random.Random(0)
    for name, data, _ in fixture_corpus:
        dgs = pack(data)[2].datagrams()
        rng.shuffle(dgs)
        rec = recover_datagrams(dgs)
        assert rec.outcome is Outcome.INTACT and rec.bytes == data, name
        assert rec.lost_mcu_total == 0 and rec.loss_fraction == 0.0


def test_duplicates_are_idempotent(fixture_corpus):
    name, data, _ = fixture_corpus[1]
    dset = pack(data)[2]
    once = ReassemblyState(3)
    twice = ReassemblyState(3)
    for h, p in dset.packets:
        once.ingest(h, p, now=0)
        twice.ingest(h, p, now=0)
        twice.ingest(h, p, now=0)
    assert once == twice
    assert finalize(twice).bytes == data


def test_header_lost(fixture_corpus):
    dset = pack(fixture_corpus[0][1])[2]
    dgs = [encode_packet(h, p) for h, p in dset.packets if not h.is_jpeg_header]
    assert recover_datagrams(dgs).outcome is Outcome.HEADER_LOST


def test_drop_one_middle_block(stock, fixture_corpus):
    for name, data in recoverable(fixture_corpus):
        img, plan, dset = pack(data)
        if len(plan.blocks) < 3:
            continue
        victim = len(plan.blocks) // 2 + 1
        k = plan.blocks[victim - 1].n_mcus
        dgs = [encode_packet(h, p) for h, p in dset.packets if h.block_num != victim]
        rec = recover_datagrams(dgs)
        assert rec.outcome is Outcome.RECOVERED and rec.lost_mcu_total == k, name
        assert_decodes(stock, rec.bytes, img, name)


def test_last_block_lost_regenerates_eoi(stock, fixture_corpus):
    for name, data in recoverable(fixture_corpus):
        img, plan, dset = pack(data)
        last = len(plan.blocks)
        dgs = [encode_packet(h, p) for h, p in dset.packets if h.block_num != last]
        rec = recover_datagrams(dgs)
        assert rec.bytes.endswith(b"\xff\xd9")
        assert rec.lost_mcu_total == plan.blocks[-1].n_mcus
        assert_decodes(stock, rec.bytes, img, name)


def test_unrecoverable_image_with_loss(fixture_corpus):
    for name, data, _ in fixture_corpus:
        img, plan, dset = pack(data, target=1024)
        if plan.recoverable:
            continue
        pk = dset.packets
        dgs = [encode_packet(h, p) for h, p in pk if h.is_jpeg_header or h.partition_idx != 0]
        rec = recover_datagrams(dgs)
        assert rec.outcome is Outcome.UNRECOVERABLE
        assert rec.lost_mcu_total == img.mcu_count_expected and rec.loss_fraction == 1.0
        return
    pytest.fail("fixture corpus has no unrecoverable image")


@pytest.mark.parametrize("mode,placement", [("block", "tail"), ("block", "inplace"),
                                            ("bit", "tail"), ("bit", "inplace")])
def test_random_loss_all_variants_decode(stock, fixture_corpus, mode, placement):
    rng = random.Random(hash((mode, placement)) & 0xFFFF)
    for name, data in recoverable(fixture_corpus):
        img, plan, dset = pack(data)
        for _ in range(5):
            keep = [encode_packet(h, p) for h, p in dset.packets
                    if h.is_jpeg_header or rng.random() > 0.2]
            rec = recover_datagrams(keep, mode=mode, placement=placement)
            assert rec.outcome in (Outcome.RECOVERED, Outcome.INTACT)
            assert_decodes(stock, rec.bytes, img, name)


def test_bit_mode_salvages_partial_blocks(fixture_corpus):
    salvaged = 0
    for name, data in recoverable(fixture_corpus):
        img, plan, dset = pack(data, target=256)
        if img.restart_interval:
            continue
        # drop the trailing partition of every multi-partition block
        dgs = [encode_packet(h, p) for h, p in dset.packets
               if h.is_jpeg_header or h.partition_num == 1 or h.partition_idx < h.partition_num - 1]
        block = recover_datagrams(dgs, mode="block")
        bit = recover_datagrams(dgs, mode="bit")
        assert bit.lost_mcu_total <= block.lost_mcu_total
        assert bit.lost_mcu_total + bit.salvaged_mcus == block.lost_mcu_total
        salvaged += bit.salvaged_mcus
    assert salvaged > 0


def test_monotone_degradation(fixture_corpus):
    rng = random.Random(5)
    for name, data in recoverable(fixture_corpus):
        dset = pack(data)[2]
        data_idx = [i for i, (h, _) in enumerate(dset.packets) if not h.is_jpeg_header]
        for _ in range(5):
            a = set(rng.sample(data_idx, max(1, len(data_idx) // 5)))
            b = a | set(rng.sample(data_idx, max(1, len(data_idx) // 5)))
            def frac(drop):
                return recover_datagrams([encode_packet(h, p) for i, (h, p) in enumerate(dset.packets)
                                          if i not in drop]).loss_fraction
            assert frac(b) >= frac(a), name


def test_stale_request_and_timeout(fixture_corpus):
    dset = pack(fixture_corpus[1][1])[2]
    st = ReassemblyState(3, timeout_ms=20)
    h, p = dset.packets[0]
    st.ingest(h, p, now=1.0)
    assert not st.ready(now=1.0)
    assert st.ready(now=1.0 + 0.020)
    finalize(st)
    with pytest.raises(StaleRequest):
        st.ingest(h, p, now=2.0)


def test_drop_first_packets_and_compare(stock, fixture_corpus):
    images = [(n, d) for n, d in recoverable(fixture_corpus)]
    dset = pack(images[0][1])[2]
    n_data = sum(not h.is_jpeg_header for h, _ in dset.packets)
    assert len(drop_first_packets(dset, 3)) == len(dset.packets) - min(3, n_data)
    report = compare_placements(images, 2, target_block_bytes=48, mtu_payload=64,
                                decoder=lambda b: stock.probe(b).clean)
    s = report["summary"]
    assert s["images"] == len(images)
    assert s["tail_decodable_fraction"] == 1.0 and s["inplace_decodable_fraction"] == 1.0
