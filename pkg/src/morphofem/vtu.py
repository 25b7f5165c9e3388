"""Minimal XML VTK unstructured-grid (.vtu) writer and reader.

Arrays are written inline in VTK's ``binary`` format: little-endian raw
bytes, base64 encoded, preceded by a separately encoded UInt64 byte count.
"""

import base64
import xml.etree.ElementTree as ET

import numpy as np

VTK_QUADRATIC_TETRA = 24

_VTK_TYPES = {
    np.dtype("float64"): "Float64",
    np.dtype("float32"): "Float32",
    np.dtype("int64"): "Int64",
    np.dtype("int32"): "Int32",
    np.dtype("int8"): "Int8",
    np.dtype("uint8"): "UInt8",
}
_NP_TYPES = {v: k for k, v in _VTK_TYPES.items()}


def _encode(arr):
    arr = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
    raw = arr.tobytes()
    header = np.array([len(raw)], dtype="<u8").tobytes()
    return (base64.b64encode(header) + base64.b64encode(raw)).decode("ascii")


def _decode(text, vtk_type):
    text = "".join(text.split())
    nhead = 12  # base64 length of an 8-byte header
    (nbytes,) = np.frombuffer(base64.b64decode(text[:nhead]), dtype="<u8")
    data = base64.b64decode(text[nhead:])[:nbytes]
    return np.frombuffer(data, dtype=_NP_TYPES[vtk_type].newbyteorder("<")).copy()


def _data_array(parent, name, arr, ncomp=None):
    arr = np.asarray(arr)
    if arr.dtype not in _VTK_TYPES:
        arr = arr.astype(np.float64)
    attrs = {"type": _VTK_TYPES[arr.dtype], "Name": name, "format": "binary"}
    if ncomp is None:
        ncomp = 1 if arr.ndim == 1 else int(np.prod(arr.shape[1:]))
    if ncomp > 1:
        attrs["NumberOfComponents"] = str(ncomp)
    el = ET.SubElement(parent, "DataArray", attrs)
    el.text = _encode(arr.reshape(-1))
    return el


def write_vtu(path, points, cells, point_data=None, cell_data=None, field_data=None):
    """Write 10-node tetrahedra with optional point and cell arrays."""
    points = np.asarray(points, dtype=np.float64)
    cells = np.asarray(cells, dtype=np.int64)
    root = ET.Element(
        "VTKFile",
        {"type": "UnstructuredGrid", "version": "1.0", "byte_order": "LittleEndian", "header_type": "UInt64"},
    )
    grid = ET.SubElement(root, "UnstructuredGrid")
    if field_data:
        fd = ET.SubElement(grid, "FieldData")
        for name, arr in field_data.items():
            a = np.atleast_1d(np.asarray(arr, dtype=np.float64))
            el = _data_array(fd, name, a)
            el.set("NumberOfTuples", str(a.size))
    piece = ET.SubElement(grid, "Piece", {"NumberOfPoints": str(len(points)), "NumberOfCells": str(len(cells))})
    pts = ET.SubElement(piece, "Points")
    _data_array(pts, "Points", points, ncomp=3)
    cel = ET.SubElement(piece, "Cells")
    _data_array(cel, "connectivity", cells.reshape(-1))
    _data_array(cel, "offsets", np.arange(1, len(cells) + 1, dtype=np.int64) * cells.shape[1])
    _data_array(cel, "types", np.full(len(cells), VTK_QUADRATIC_TETRA, dtype=np.uint8))
    for tag, data in (("PointData", point_data), ("CellData", cell_data)):
        sec = ET.SubElement(piece, tag)
        for name, arr in (data or {}).items():
            _data_array(sec, name, arr)
    ET.ElementTree(root).write(path, xml_declaration=True, encoding="utf-8")


def read_vtu(path):
    """Read a file produced by :func:`write_vtu`.

    Returns
    -------
    dict with ``points``, ``cells``, ``types``, ``point_data``, ``cell_data``
    and ``field_data``.
    """
    root = ET.parse(path).getroot()
    if root.get("type") != "UnstructuredGrid":
        raise ValueError(f"{path}: not an UnstructuredGrid file")
    piece = root.find("UnstructuredGrid/Piece")

    def arrays(section):
        out = {}
        if section is None:
            return out
        for el in section.findall("DataArray"):
            a = _decode(el.text or "", el.get("type"))
            ncomp = int(el.get("NumberOfComponents", "1"))
            out[el.get("Name")] = a.reshape(-1, ncomp) if ncomp > 1 else a
        return out

    cells = arrays(piece.find("Cells"))
    offsets = cells["offsets"]
    npe = int(offsets[0]) if len(offsets) else 10
    return {
        "points": arrays(piece.find("Points"))["Points"],
        "cells": cells["connectivity"].reshape(-1, npe),
        "types": cells["types"],
        "point_data": arrays(piece.find("PointData")),
        "cell_data": arrays(piece.find("CellData")),
        "field_data": arrays(root.find("UnstructuredGrid/FieldData")),
    }
