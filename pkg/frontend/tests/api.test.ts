import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { decisionForKey } from "../src/keyboard.js";
import { makeCase, pageOf, fetchStub } from "./helpers.js";

describe("ApiClient", () => {
  it("builds worklist queries with status and pagination", async () => {
    const body = JSON.stringify(pageOf([makeCase()]));
    const { fn, calls } = fetchStub([["GET", "/cases?", 200, body]]);
    const api = new ApiClient("", fn);
    const page = await api.listCases("pending", 2, 10);
    expect(calls[0].url).toBe("/cases?status=pending&page=2&page_size=10");
    expect(page.cases).toHaveLength(1);
  });

  it("posts verdicts as JSON with the reviewer", async () => {
    const updated = JSON.stringify(makeCase({ status: "reviewed" }));
    const { fn, calls } = fetchStub([["POST", "/cases/c1/verdict", 200, updated]]);
    const api = new ApiClient("", fn);
    await api.postVerdict("c1", "confirm_tb", "dr_x");
    expect(calls[0].method).toBe("POST");
    expect(JSON.parse(calls[0].body!)).toEqual({ decision: "confirm_tb", reviewer: "dr_x" });
  });

  it("raises ApiError with the status on failure", async () => {
    const { fn } = fetchStub([["POST", "/cases/gone/verdict", 404, '{"detail":"unknown case"}']]);
    const api = new ApiClient("", fn);
    await expect(api.postVerdict("gone", "uncertain")).rejects.toMatchObject({ status: 404 });
    await expect(api.postVerdict("gone", "uncertain")).rejects.toBeInstanceOf(ApiError);
  });

  it("derives image and heatmap urls from the case id", () => {
    const api = new ApiClient("http://svc");
    expect(api.imageUrl("abc")).toBe("http://svc/cases/abc/image.png");
    expect(api.heatmapUrl("abc")).toBe("http://svc/cases/abc/heatmap.png");
  });
});

describe("keyboard shortcuts", () => {
  it("maps T/H/U to decisions, case-insensitive", () => {
    expect(decisionForKey("t")).toBe("confirm_tb");
    expect(decisionForKey("T")).toBe("confirm_tb");
    expect(decisionForKey("h")).toBe("confirm_healthy");
    expect(decisionForKey("u")).toBe("uncertain");
    expect(decisionForKey("x")).toBeNull();
  });

  it("ignores keys while typing in form fields", () => {
    expect(decisionForKey("t", "INPUT")).toBeNull();
    expect(decisionForKey("t", "TEXTAREA")).toBeNull();
    expect(decisionForKey("t", "DIV")).toBe("confirm_tb");
  });
});
