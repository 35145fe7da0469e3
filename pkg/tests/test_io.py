import json
import os

import numpy as np
import pytest

from suelogit.io import (
    InputError,
    atomic_write_text,
    read_counts,
    read_demand,
    read_network,
    read_tntp_network,
    write_csv,
    write_json,
)
from suelogit.synthetic import builtin_network

NET_TNTP = """<NUMBER OF ZONES> 2
<NUMBER OF NODES> 3
<FIRST THRU NODE> 1
<NUMBER OF LINKS> 2
<END OF METADATA>
~ init term cap length fft b power speed toll type ;
1 2 100 4 5 0.15 4 0 0 1 ;
2 3 200 6 7 0.15 4 0 0 1 ;
"""


def test_sioux_falls_data():
    sf = builtin_network("siouxfalls")
    assert sf.network.n_links == 76
    assert len(sf.network.nodes) == 24
    assert len(sf.od) == 528
    assert sf.od.total == pytest.approx(360600)
    assert sf.network.attribute_names == ("c", "s")


def test_tntp_round_trip(tmp_path):
    p = tmp_path / "net.tntp"
    p.write_text(NET_TNTP)
    links = read_tntp_network(p)
    assert [(lk.from_node, lk.to_node, lk.capacity, lk.length, lk.free_flow_time) for lk in links] == [
        (1, 2, 100, 4, 5), (2, 3, 200, 6, 7)]


def test_tntp_error_names_file_and_line(tmp_path):
    p = tmp_path / "net.tntp"
    p.write_text(NET_TNTP.replace("2 3 200 6 7", "2 3 abc 6 7"))
    with pytest.raises(InputError, match=r"net.tntp:8"):
        read_tntp_network(p)
    p.write_text(NET_TNTP.replace("<NUMBER OF LINKS> 2", "<NUMBER OF LINKS> 3"))
    with pytest.raises(InputError, match="declares 3"):
        read_tntp_network(p)


def test_csv_network_with_attribute_sidecar(tmp_path):
    (tmp_path / "links.csv").write_text(
        "link_id,init_node,term_node,capacity,fft,b,power,is_connector\n"
        "10,1,2,100,5,0.15,4,0\n11,2,3,100,5,0.15,4,1\n")
    (tmp_path / "attributes.csv").write_text("link_id,c\n10,2.5\n11,9\n")
    net = read_network(tmp_path / "links.csv")
    assert net.attribute_names == ("c",)
    assert net.Z.tolist() == [[2.5], [0.0]]
    assert net.link_index == {10: 0, 11: 1}


def test_bad_attribute_row(tmp_path):
    (tmp_path / "links.csv").write_text("init_node,term_node,capacity,fft\n1,2,100,5\n")
    (tmp_path / "a.csv").write_text("link_id,c\n# comment\n7,1\n")
    with pytest.raises(InputError, match=r"a.csv:3: unknown link_id 7"):
        read_network(tmp_path / "links.csv", tmp_path / "a.csv")


def test_demand_readers(tmp_path):
    (tmp_path / "od.csv").write_text("origin,destination,demand\n1,2,5\n2,1,0\n")
    od = read_demand(tmp_path / "od.csv")
    assert od.pairs == ((1, 2),)
    (tmp_path / "bad.csv").write_text("origin,destination,demand\n1,2,5\n1,2,3\n")
    with pytest.raises(InputError, match="duplicate"):
        read_demand(tmp_path / "bad.csv")
    (tmp_path / "trips.tntp").write_text("<END OF METADATA>\nOrigin 1\n 2 : 5.0; 3 : 0.0;\nOrigin 2\n 1 : 4;\n")
    assert read_demand(tmp_path / "trips.tntp").as_dict() == {(1, 2): 5.0, (2, 1): 4.0}
    with pytest.raises(InputError, match="not found"):
        read_demand(tmp_path / "nope.csv")


def test_counts_keep_negative_values(tmp_path):
    (tmp_path / "c.csv").write_text("link_id,count\n1,-3.5\n2,10\n")
    assert read_counts(tmp_path / "c.csv") == {1: -3.5, 2: 10.0}
    (tmp_path / "d.csv").write_text("link_id,count\n1,x\n")
    with pytest.raises(InputError, match=r"d.csv:2"):
        read_counts(tmp_path / "d.csv")


def test_writers_are_atomic_and_formatted(tmp_path):
    write_csv(tmp_path / "x.csv", ["a", "b"], [[1, 1 / 3], ["s", np.float64(2e-9)]])
    assert (tmp_path / "x.csv").read_text() == "a,b\n1,0.333333\ns,2e-09\n"
    write_json(tmp_path / "x.json", {"v": np.arange(2), "nan": float("nan"), "f": np.float32(1.5)})
    assert json.loads((tmp_path / "x.json").read_text()) == {"v": [0, 1], "nan": None, "f": 1.5}
    assert [p for p in os.listdir(tmp_path) if p.endswith(".tmp")] == []


def test_failed_write_leaves_previous_file(tmp_path):
    target = tmp_path / "keep.txt"
    target.write_text("old")

    class Boom:
        def __str__(self):
            raise RuntimeError("boom")

    with pytest.raises(TypeError):
        atomic_write_text(target, Boom())
    assert target.read_text() == "old"
    assert os.listdir(tmp_path) == ["keep.txt"]
