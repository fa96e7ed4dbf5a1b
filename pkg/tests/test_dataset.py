import random

import pytest

from conftest import make_records, numeric_catalogue
from iotident.dataset import (
    LabelMap,
    PacketRecord,
    assign_labels,
    cap_per_class,
    default_device_key,
    load_alias_map,
    load_label_map,
    merge_labels,
    normalize_mac,
    packaged_label_map,
    read_dataset,
    read_dataset_meta,
    split_by_capture,
    write_dataset,
)
from iotident.errors import (
    AliasMapError,
    InsufficientFilesError,
    LabelMapError,
    SchemaMismatchError,
    SingleFileDeviceWarning,
)
from iotident.features import default_catalogue


# ------------------------------------------------------------------ labeling

def test_normalize_mac():
    assert normalize_mac("AA:BB:CC:DD:EE:FF") == "aa:bb:cc:dd:ee:ff"
    assert normalize_mac("aa-bb-cc-dd-ee-ff") == "aa:bb:cc:dd:ee:ff"
    with pytest.raises(LabelMapError):
        normalize_mac("aa:bb:cc:dd:ee")
    with pytest.raises(LabelMapError):
        normalize_mac("zz:bb:cc:dd:ee:ff")


def rec(mac, capture="c1", index=0, label=None):
    return PacketRecord(
        src_mac=mac, label=label, transfer=False,
        capture_id=capture, index=index, features=(1.0,),
    )


def test_assign_labels_basic():
    lm = LabelMap(entries={"aa:aa:aa:aa:aa:01": "Plug"}, shared_macs=frozenset())
    labeled, unknown = assign_labels([rec("aa:aa:aa:aa:aa:01"), rec("bb:bb:bb:bb:bb:02")], lm)
    assert labeled[0].label == "Plug" and labeled[0].transfer is False
    assert labeled[1].label is None
    assert unknown == 1


def test_assign_labels_empty_input():
    lm = LabelMap(entries={"aa:aa:aa:aa:aa:01": "Plug"})
    labeled, unknown = assign_labels([], lm)
    assert labeled == [] and unknown == 0


def test_shared_mac_gets_primary_label_and_transfer_flag():
    lm = packaged_label_map("aalto")
    labeled, _ = assign_labels([rec("1c:5f:2b:aa:fd:4e")], lm)
    assert labeled[0].label == "D-LinkHomeHub"
    assert labeled[0].transfer is True
    labeled, _ = assign_labels([rec("00:17:88:24:76:ff")], lm)
    assert labeled[0].label == "HueBridge"
    assert labeled[0].transfer is True
    # paired devices (two addresses, one label) are not transfer-flagged
    labeled, _ = assign_labels([rec("94:10:3e:35:01:c1")], lm)
    assert labeled[0].label == "WeMoSwitch"
    assert labeled[0].transfer is False


def test_assign_labels_idempotent_and_order_independent():
    lm = LabelMap(entries={"aa:aa:aa:aa:aa:01": "A", "bb:bb:bb:bb:bb:02": "B"})
    records = [rec("aa:aa:aa:aa:aa:01"), rec("bb:bb:bb:bb:bb:02"), rec("cc:cc:cc:cc:cc:03")]
    once, _ = assign_labels(records, lm)
    twice, _ = assign_labels(once, lm)
    assert once == twice
    rev, _ = assign_labels(records[::-1], lm)
    assert rev == twice[::-1]


def test_load_label_map(tmp_path):
    p = tmp_path / "map.csv"
    p.write_text(
        "# comment\n"
        "AA:00:00:00:00:01,DeviceA\n"
        "aa:00:00:00:00:02,Hub,transfer\n"
        "\n"
    )
    lm = load_label_map(p)
    assert lm.entries["aa:00:00:00:00:01"] == "DeviceA"
    assert lm.shared_macs == {"aa:00:00:00:00:02"}
    bad = tmp_path / "bad.csv"
    bad.write_text("aa:00:00:00:00:01,A\naa:00:00:00:00:01,B\n")
    with pytest.raises(LabelMapError):
        load_label_map(bad)


# --------------------------------------------------------------------- split

def test_split_16_4():
    files = [f"DeviceX/setup-{i}.pcap" for i in range(20)]
    plan = split_by_capture(files, ratio=0.8, seed=1)
    assert len(plan.train_files) == 16
    assert len(plan.test_files) == 4
    assert set(plan.train_files) | set(plan.test_files) == set(files)


def test_split_deterministic():
    files = [f"dev{d}/s-{i}.pcap" for d in range(3) for i in range(10)]
    a = split_by_capture(files, 0.8, seed=42)
    b = split_by_capture(files, 0.8, seed=42)
    assert a == b
    c = split_by_capture(files, 0.8, seed=43)
    assert c != a  # different seed shuffles differently (overwhelmingly likely)


def test_split_partition_property_over_seeds():
    files = [f"dev/f-{i}.pcap" for i in range(5)]
    for seed in range(100):
        plan = split_by_capture(files, 0.8, seed=seed)
        assert len(plan.train_files) == 4
        assert len(plan.test_files) == 1
        assert set(plan.train_files) | set(plan.test_files) == set(files)
        assert not set(plan.train_files) & set(plan.test_files)


def test_split_stratified_per_device():
    files = [f"dev{d}/s-{i}.pcap" for d in range(4) for i in range(10)]
    plan = split_by_capture(files, 0.8, seed=7)
    for d in range(4):
        dev_train = [f for f in plan.train_files if f.startswith(f"dev{d}/")]
        dev_test = [f for f in plan.test_files if f.startswith(f"dev{d}/")]
        assert len(dev_train) == 8 and len(dev_test) == 2


def test_split_single_file_device_warns_to_train():
    files = ["solo/only.pcap", "dev/a-1.pcap", "dev/a-2.pcap"]
    with pytest.warns(SingleFileDeviceWarning):
        plan = split_by_capture(files, 0.5, seed=0)
    assert "solo/only.pcap" in plan.train_files


def test_split_too_few_files():
    with pytest.raises(InsufficientFilesError):
        split_by_capture(["one.pcap"], 0.8, seed=0)
    with pytest.raises(InsufficientFilesError):
        split_by_capture(["a.pcap", "a.pcap"], 0.8, seed=0)


def test_device_key():
    assert default_device_key("DeviceA/setup-1.pcap") == "DeviceA"
    assert default_device_key("plain-3.pcap") == "plain"
    assert default_device_key("plain_12.pcap") == "plain"
    assert default_device_key("nodigits.pcap") == "nodigits"


# --------------------------------------------------------------------- merge

def test_merge_labels():
    records = [rec("aa:aa:aa:aa:aa:01", label="EdimaxPlug1101W"),
               rec("aa:aa:aa:aa:aa:02", label="EdimaxPlug2101W"),
               rec("aa:aa:aa:aa:aa:03", label="Other")]
    alias = {"EdimaxPlug1101W": "EdimaxPlug", "EdimaxPlug2101W": "EdimaxPlug"}
    merged = merge_labels(records, alias)
    assert [r.label for r in merged] == ["EdimaxPlug", "EdimaxPlug", "Other"]
    assert merge_labels(records, {}) == records


def test_alias_chains_rejected(tmp_path):
    with pytest.raises(AliasMapError):
        merge_labels([], {"A": "B", "B": "C"})
    p = tmp_path / "alias.csv"
    p.write_text("A,B\nB,C\n")
    with pytest.raises(AliasMapError):
        load_alias_map(p)
    p.write_text("A,C\nB,C\n")
    assert load_alias_map(p) == {"A": "C", "B": "C"}


def test_packaged_merge_groups_load(tmp_path):
    from importlib import resources

    with resources.as_file(
        resources.files("iotident.data").joinpath("aalto_merge_groups.csv")
    ) as p:
        alias = load_alias_map(p)
    assert alias["EdimaxPlug1101W"] == "EdimaxPlug"
    assert alias["TP-LinkPlugHS110"] == "TP-LinkPlug"


# ----------------------------------------------------------------------- cap

def test_cap_per_class_deterministic():
    records = [rec(f"aa:aa:aa:aa:aa:{i%9:02x}", index=i, label="A" if i < 80 else "B")
               for i in range(100)]
    capped = cap_per_class(records, 30, seed=3)
    labels = [r.label for r in capped]
    assert labels.count("A") == 30 and labels.count("B") == 20
    assert capped == cap_per_class(records, 30, seed=3)
    assert [r.index for r in capped] == sorted(r.index for r in capped)


# ------------------------------------------------------------------- csv i/o

def random_record(rnd, cat, i):
    values = []
    for kind in cat.kinds:
        if kind == "numeric":
            values.append(rnd.choice([-1.0, rnd.uniform(0, 1e4), float(rnd.randrange(65536))]))
        elif kind == "boolean":
            values.append(rnd.random() < 0.5)
        else:
            values.append(rnd.choice(["DNS", "TCP", "absent", "NoPort"]))
    return PacketRecord(
        src_mac=rnd.choice(["aa:aa:aa:aa:aa:01", None]),
        label=rnd.choice(["DeviceA", "DeviceB", None]),
        transfer=rnd.random() < 0.1,
        capture_id=f"dir/cap-{rnd.randrange(5)}.pcap",
        index=i,
        features=tuple(values),
    )


def test_dataset_round_trip(tmp_path):
    cat = default_catalogue()
    rnd = random.Random(11)
    records = [random_record(rnd, cat, i) for i in range(1000)]
    path = tmp_path / "data.csv"
    write_dataset(records, path, cat)
    back = read_dataset(path, cat)
    assert back == records
    meta = read_dataset_meta(path)
    assert len(meta) == 1000
    assert meta[0]["capture_id"] == records[0].capture_id


def test_schema_mismatch_on_permuted_columns(tmp_path):
    cat = default_catalogue()
    rnd = random.Random(1)
    path = tmp_path / "data.csv"
    write_dataset([random_record(rnd, cat, 0)], path, cat)
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    header[5], header[6] = header[6], header[5]
    path.write_text("\n".join([",".join(header)] + lines[1:]) + "\n")
    with pytest.raises(SchemaMismatchError):
        read_dataset(path, cat)


def test_header_only_and_empty_files(tmp_path):
    cat = default_catalogue()
    path = tmp_path / "empty.csv"
    write_dataset([], path, cat)
    assert read_dataset(path, cat) == []
    bare = tmp_path / "bare.csv"
    bare.write_text("")
    with pytest.raises(SchemaMismatchError):
        read_dataset(bare, cat)


def test_wrong_catalogue_rejected(tmp_path):
    cat = numeric_catalogue(3)
    records = make_records([[1, 2, 3]], ["A"])
    path = tmp_path / "d.csv"
    write_dataset(records, path, cat)
    with pytest.raises(SchemaMismatchError):
        read_dataset(path, default_catalogue())
