import { describe, expect, it } from "vitest";

import { buildProjectGroups, formatFileSize, statusColor }
  from "../src/projects.js";
import type { ProjectRow } from "../src/types.js";

function row(partial: Partial<ProjectRow>): ProjectRow {
  return {
    id: "x", name: "p", file_name: "f.csv", test_name: "", test_type: "",
    file_size: 0, channel: 0, num_cycles: 0, created_at: null,
    status: "Ready", error: "", processing_message: "",
    organization_id: null,
    ...partial,
  };
}

describe("status colors", () => {
  it("processed rows render in the default (black) text", () => {
    expect(statusColor("Ready")).toBe("default");
  });
  it("rows still processing render grey", () => {
    expect(statusColor("Processing")).toBe("grey");
    expect(statusColor("Pending")).toBe("grey");
  });
  it("failures render red", () => {
    expect(statusColor("Failed")).toBe("red");
  });
});

describe("grouped table model", () => {
  it("groups consecutive rows by project name", () => {
    const groups = buildProjectGroups([
      row({ id: "1", name: "LCO" }),
      row({ id: "2", name: "NCA", file_name: "NCA.xlsx" }),
      row({ id: "3", name: "NCA", file_name: "NCA_2.xlsx" }),
    ]);
    expect(groups.map((g) => [g.name, g.rows.length])).toEqual(
      [["LCO", 1], ["NCA", 2]]);
  });

  it("failed rows carry the error as tooltip", () => {
    const groups = buildProjectGroups([
      row({ status: "Failed", error: "no registered profile matches" }),
    ]);
    expect(groups[0].rows[0].color).toBe("red");
    expect(groups[0].rows[0].tooltip).toMatch(/no registered profile/);
  });

  it("file sizes format like the listing", () => {
    expect(formatFileSize(8763801)).toBe("8.36 MB");
    expect(formatFileSize(610868)).toBe("596.55 KB");
    expect(formatFileSize(512)).toBe("512 B");
  });
});
