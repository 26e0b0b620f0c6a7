import type { ProjectRow } from "./types.js";

/** Status drives the row color: processed rows render normally, rows still
 * being processed grey, failures red. */
export type StatusColor = "default" | "grey" | "red";

export function statusColor(status: ProjectRow["status"]): StatusColor {
  switch (status) {
    case "Ready":
      return "default";
    case "Pending":
    case "Processing":
      return "grey";
    case "Failed":
      return "red";
  }
}

export interface ProjectRowView {
  row: ProjectRow;
  color: StatusColor;
  fileSizeText: string;
  tooltip: string;
}

export interface ProjectGroup {
  name: string;
  rows: ProjectRowView[];
}

export function formatFileSize(bytes: number): string {
  if (bytes < 1024) return `${bytes} B`;
  if (bytes < 1024 * 1024) return `${(bytes / 1024).toFixed(2)} KB`;
  if (bytes < 1024 * 1024 * 1024) return `${(bytes / 1024 / 1024).toFixed(2)} MB`;
  return `${(bytes / 1024 / 1024 / 1024).toFixed(2)} GB`;
}

/** Group rows by project name, preserving the server's name ordering. */
export function buildProjectGroups(rows: ProjectRow[]): ProjectGroup[] {
  const groups: ProjectGroup[] = [];
  let current: ProjectGroup | null = null;
  for (const row of rows) {
    if (!current || current.name !== row.name) {
      current = { name: row.name, rows: [] };
      groups.push(current);
    }
    current.rows.push({
      row,
      color: statusColor(row.status),
      fileSizeText: formatFileSize(row.file_size),
      tooltip: row.status === "Failed" ? row.error
        : row.status === "Ready" ? ""
        : row.processing_message,
    });
  }
  return groups;
}
